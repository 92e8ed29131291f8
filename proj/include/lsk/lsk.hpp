#pragma once

#include "lsk/analysis.hpp"
#include "lsk/backbone.hpp"
#include "lsk/block.hpp"
#include "lsk/config.hpp"
#include "lsk/cost.hpp"
#include "lsk/gradcheck.hpp"
#include "lsk/io.hpp"
#include "lsk/lsk_module.hpp"
#include "lsk/plan.hpp"
#include "lsk/plan_search.hpp"
#include "lsk/train.hpp"
