#pragma once

#include "lsk/conv.hpp"
#include "lsk/elementwise.hpp"
#include "lsk/norm.hpp"
#include "lsk/pooling.hpp"
#include "lsk/tensor.hpp"
