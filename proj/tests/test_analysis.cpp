#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "analysis_fixture.hpp"
#include "lsk/analysis.hpp"

using fixture::constant_entry;
using fixture::explicit_entry;
using fixture::rect;
using lsk::ImageSample;
using lsk::Point;

namespace {

const ImageSample* find_stem(const std::vector<ImageSample>& v, const std::string& stem) {
    for (const auto& s : v)
        if (s.stem == stem) return &s;
    return nullptr;
}

}  // namespace

TEST(Annotations, SingleBox) {
    const auto s = lsk::parse_annotations("0 0 10 0 10 10 0 10 ship 0\n");
    ASSERT_EQ(s.boxes.size(), 1u);
    EXPECT_DOUBLE_EQ(s.boxes[0].area(), 100.0);
    EXPECT_EQ(s.boxes[0].category, "ship");
    EXPECT_EQ(s.boxes[0].difficulty, 0);
    EXPECT_EQ(s.malformed, 0u);
}

TEST(Annotations, EmptyInput) {
    const auto s = lsk::parse_annotations(std::string());
    EXPECT_TRUE(s.boxes.empty());
    EXPECT_EQ(s.malformed, 0u);
    EXPECT_EQ(s.degenerate, 0u);
}

TEST(Annotations, SevenCoordinatesIsMalformed) {
    const auto s = lsk::parse_annotations("0 0 10 0 10 10 0 ship 0\n");
    EXPECT_TRUE(s.boxes.empty());
    EXPECT_EQ(s.malformed, 1u);
}

TEST(Annotations, MetadataSkippedAndDifficultyOptional) {
    const std::string text =
        "imagesource:GoogleEarth\n"
        "gsd:0.146343590398\n"
        "\n"
        "2 2 6 2 6 5 2 5 small-vehicle 1\n"
        "1.5 0 3 1.5 1.5 3 0 1.5 bridge\n"
        "0 0 1 1 2 2 3 3 plane 0\n"
        "0 0 10 0 10 10 0 10 ship 2\n"
        "0 0 10 0 10 10 0 10 7 0\n";
    const auto s = lsk::parse_annotations(text);
    ASSERT_EQ(s.boxes.size(), 2u);
    EXPECT_EQ(s.boxes[0].category, "small-vehicle");
    EXPECT_EQ(s.boxes[0].difficulty, 1);
    EXPECT_DOUBLE_EQ(s.boxes[0].area(), 12.0);
    EXPECT_EQ(s.boxes[1].category, "bridge");
    EXPECT_DOUBLE_EQ(s.boxes[1].area(), 4.5);
    EXPECT_EQ(s.degenerate, 1u);
    EXPECT_EQ(s.malformed, 2u);  // difficulty 2, numeric category
}

TEST(Annotations, UnreadableStreamThrows) {
    std::istringstream is("0 0 1 0 1 1 0 1 a 0");
    is.setstate(std::ios::badbit);
    EXPECT_THROW(lsk::parse_annotations(is), std::runtime_error);
}

TEST(PolygonArea, Examples) {
    const Point square[4] = {{0, 0}, {10, 0}, {10, 10}, {0, 10}};
    EXPECT_DOUBLE_EQ(lsk::polygon_area(square), 100.0);
    const Point diamond[4] = {{1, 0}, {2, 1}, {1, 2}, {0, 1}};
    EXPECT_DOUBLE_EQ(lsk::polygon_area(diamond), 2.0);
    const Point line[4] = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    EXPECT_DOUBLE_EQ(lsk::polygon_area(line), 0.0);
    const Point clockwise[4] = {{0, 0}, {0, 10}, {10, 10}, {10, 0}};
    EXPECT_DOUBLE_EQ(lsk::polygon_area(clockwise), 100.0);
}

TEST(Rc, ZeroMasksGiveZero) {
    auto v = fixture::biased_fixture();
    for (auto& img : v)
        for (auto& e : img.record.entries) e.masks.fill(0.0);
    const auto r = lsk::compute_all_rc(v);
    ASSERT_EQ(r.stats.size(), 2u);
    for (const auto& s : r.stats) EXPECT_EQ(s.r_c_raw, 0.0);
}

TEST(Rc, SingleBlockHandValue) {
    ImageSample img{"x", {}, {rect(0, 0, 23, 2, "c")}};
    img.record.entries = {constant_entry(1, 1, 4, 4, {1.0}, {23})};
    const auto s = lsk::compute_rc({img}, "c");
    EXPECT_DOUBLE_EQ(s.r_c_raw, 8.0);
    EXPECT_EQ(s.images, 1u);
}

TEST(Rc, ThreeBlockHandOracle) {
    const auto v = fixture::three_block_fixture();
    // a1: A = (5*1.0 + 23*2.0) + (5*1.0 + 23*2.0) + (5*0.2 + 23*0.6) = 116.8, B = 100 + 20
    // a2: A = 23*1.0 + 5*4.0 + (5*0.5 + 23*0.5) = 57, B = 16
    const double ra = (116.8 / 120.0 + 57.0 / 16.0) / 2.0;
    // b1: A = 2 * 4*(5+23)*0.5 + (5+23)*0.5 = 126, B = 10
    const double rb = 126.0 / 10.0;
    const auto a = lsk::compute_rc(v, "a");
    EXPECT_NEAR(a.r_c_raw, ra, 1e-9);
    EXPECT_EQ(a.images, 2u);
    const auto all = lsk::compute_all_rc(v);
    ASSERT_EQ(all.stats.size(), 2u);
    EXPECT_EQ(all.stats[0].category, "a");
    EXPECT_NEAR(all.stats[1].r_c_raw, rb, 1e-9);
    EXPECT_EQ(all.stats[0].r_c_norm, 0.0);
    EXPECT_EQ(all.stats[1].r_c_norm, 1.0);
}

TEST(Rc, NormalizationConventions) {
    ImageSample x{"x", {}, {rect(0, 0, 1, 1, "p")}}, y{"y", {}, {rect(0, 0, 1, 1, "q")}};
    x.record.entries = {constant_entry(1, 1, 2, 2, {0.3, 0.6}, {5, 23})};
    y.record.entries = x.record.entries;
    const auto equal = lsk::compute_all_rc({x, y});
    ASSERT_EQ(equal.stats.size(), 2u);
    EXPECT_EQ(equal.stats[0].r_c_norm, equal.stats[1].r_c_norm);
    EXPECT_EQ(equal.stats[0].r_c_norm, 1.0);
    const auto single = lsk::compute_all_rc({x});
    ASSERT_EQ(single.stats.size(), 1u);
    EXPECT_EQ(single.stats[0].r_c_norm, 1.0);
}

TEST(Rc, IneligibleCategoriesAndZeroAreaImages) {
    ImageSample mixed{"m", {}, {rect(0, 0, 1, 1, "p"), rect(0, 0, 1, 1, "q")}};
    mixed.record.entries = {constant_entry(1, 1, 1, 1, {1.0}, {3})};
    ImageSample p{"p", {}, {rect(0, 0, 2, 2, "p")}};
    p.record.entries = mixed.record.entries;
    ImageSample flat{"flat", {}, {lsk::OrientedBox{{{{0, 0}, {1, 1}, {2, 2}, {3, 3}}}, "p", 0}}};
    flat.record.entries = mixed.record.entries;
    EXPECT_THROW(lsk::compute_rc({mixed}, "q"), std::invalid_argument);
    const auto r = lsk::compute_all_rc({mixed, p, flat});
    ASSERT_EQ(r.stats.size(), 1u);
    EXPECT_EQ(r.stats[0].category, "p");
    EXPECT_EQ(r.stats[0].images, 1u);
    EXPECT_DOUBLE_EQ(r.stats[0].r_c_raw, 3.0 / 4.0);
    ASSERT_EQ(r.notices.size(), 2u);
}

TEST(Rc, RfCountMustMatchMasks) {
    ImageSample img{"x", {}, {rect(0, 0, 1, 1, "c")}};
    img.record.entries = {constant_entry(1, 1, 1, 1, {1.0, 1.0}, {3})};
    EXPECT_THROW(lsk::compute_rc({img}, "c"), std::invalid_argument);
}

TEST(RcProperty, BatchOrderInvariant) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = fixture::biased_fixture(rng(), 5);
        const auto ref = lsk::compute_all_rc(v);
        std::shuffle(v.begin(), v.end(), rng);
        const auto got = lsk::compute_all_rc(v);
        ASSERT_EQ(got.stats.size(), ref.stats.size());
        for (std::size_t i = 0; i < ref.stats.size(); ++i) {
            EXPECT_NEAR(got.stats[i].r_c_raw, ref.stats[i].r_c_raw, 1e-9 * std::abs(ref.stats[i].r_c_raw));
            EXPECT_NEAR(got.stats[i].r_c_norm, ref.stats[i].r_c_norm, 1e-9);
        }
    }
}

TEST(RcProperty, MaskScalingScalesArea) {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> lam(0.01, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        auto v = fixture::biased_fixture(rng(), 3);
        const double l = trial == 0 ? 1.0 : lam(rng);
        std::vector<double> before;
        for (const auto& img : v) before.push_back(lsk::selective_rf_area(img.record));
        const auto ref = lsk::compute_all_rc(v);
        for (auto& img : v)
            for (auto& e : img.record.entries)
                for (auto& x : e.masks.span()) x *= l;
        for (std::size_t i = 0; i < v.size(); ++i)
            EXPECT_NEAR(lsk::selective_rf_area(v[i].record), l * before[i], 1e-12 * before[i]);
        const auto got = lsk::compute_all_rc(v);
        for (std::size_t i = 0; i < ref.stats.size(); ++i)
            EXPECT_NEAR(got.stats[i].r_c_norm, ref.stats[i].r_c_norm, 1e-9);
    }
}

TEST(SelectionDiff, IdenticalMasksGiveZero) {
    auto v = fixture::biased_fixture();
    for (auto& img : v)
        for (auto& e : img.record.entries)
            std::copy(e.masks.plane(0, 0), e.masks.plane(0, 0) + e.masks.plane_size(), e.masks.plane(0, 1));
    for (const std::string c : {"local-texture", "needs-context"})
        for (const auto& d : lsk::compute_selection_diff(v, c)) {
            EXPECT_EQ(d.delta_raw, 0.0);
            EXPECT_EQ(d.delta_abs, 0.0);
            EXPECT_EQ(d.delta_norm, 1.0);
        }
}

TEST(SelectionDiff, BoundAttained) {
    ImageSample img{"x", {}, {rect(0, 0, 1, 1, "c")}};
    img.record.entries = {constant_entry(1, 1, 3, 3, {0.0, 1.0}, {5, 23}),
                          constant_entry(1, 2, 3, 3, {1.0, 0.0}, {23, 5})};
    const auto d = lsk::compute_selection_diff({img}, "c");
    ASSERT_EQ(d.size(), 2u);
    EXPECT_EQ(d[0].delta_raw, 1.0);
    EXPECT_EQ(d[1].delta_raw, 1.0);  // larger RF listed first
}

TEST(SelectionDiff, ThreeBlockHandOracle) {
    const auto d = lsk::compute_selection_diff(fixture::three_block_fixture(), "a");
    ASSERT_EQ(d.size(), 3u);
    EXPECT_EQ(d[0].block(), "B_1_1");
    EXPECT_EQ(d[1].block(), "B_1_2");
    EXPECT_EQ(d[2].block(), "B_2_1");
    // B_1_1: a1 mean(0.4, 0.3, 0.2, 0.1) = 0.25, a2 0.25
    EXPECT_NEAR(d[0].delta_raw, 0.25, 1e-9);
    EXPECT_NEAR(d[0].delta_abs, 0.25, 1e-9);
    // B_1_2: a1 mean(0.75, -0.25, 0.75, -0.25) = 0.25 (abs 0.5), a2 -1 (abs 1)
    EXPECT_NEAR(d[1].delta_raw, -0.375, 1e-9);
    EXPECT_NEAR(d[1].delta_abs, 0.75, 1e-9);
    // B_2_1: a1 0.4, a2 0
    EXPECT_NEAR(d[2].delta_raw, 0.2, 1e-9);
    EXPECT_NEAR(d[2].delta_abs, 0.2, 1e-9);
    EXPECT_NEAR(d[0].delta_norm, 1.0, 1e-9);
    EXPECT_NEAR(d[1].delta_norm, 0.0, 1e-9);
    EXPECT_NEAR(d[2].delta_norm, 0.575 / 0.625, 1e-9);
}

TEST(SelectionDiff, RequiresTwoMasks) {
    ImageSample img{"x", {}, {rect(0, 0, 1, 1, "c")}};
    img.record.entries = {constant_entry(1, 1, 2, 2, {0.2, 0.3, 0.5}, {3, 7, 13})};
    EXPECT_THROW(lsk::compute_selection_diff({img}, "c"), lsk::UnsupportedPlan);
    img.record.entries = {constant_entry(1, 1, 2, 2, {0.2}, {3})};
    EXPECT_THROW(lsk::compute_selection_diff({img}, "c"), lsk::UnsupportedPlan);
}

TEST(SelectionDiffProperty, BoundedByOne) {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        ImageSample img{"x", {}, {rect(0, 0, 1, 1, "c")}};
        for (std::size_t b = 1; b <= 3; ++b) {
            auto e = constant_entry(1, b, 1 + rng() % 5, 1 + rng() % 5, {0, 0}, {5, 23});
            for (auto& x : e.masks.span()) x = u(rng);
            img.record.entries.push_back(std::move(e));
        }
        for (const auto& d : lsk::compute_selection_diff({img}, "c")) {
            EXPECT_LE(std::abs(d.delta_raw), 1.0);
            EXPECT_LE(d.delta_abs, 1.0);
            EXPECT_GE(d.delta_abs, std::abs(d.delta_raw) - 1e-15);
            EXPECT_GE(d.delta_norm, 0.0);
            EXPECT_LE(d.delta_norm, 1.0);
        }
    }
}

TEST(SelectionDiffProperty, BiasedCategoriesRankByConstruction) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto v = fixture::biased_fixture(seed);
        const auto ctx = lsk::compute_selection_diff(v, "needs-context");
        const auto tex = lsk::compute_selection_diff(v, "local-texture");
        ASSERT_EQ(ctx.size(), 13u);
        EXPECT_GT(lsk::mean_selection_diff(ctx), 0.0);
        EXPECT_LT(lsk::mean_selection_diff(tex), 0.0);
        EXPECT_GT(lsk::mean_selection_diff(ctx), lsk::mean_selection_diff(tex));
    }
    EXPECT_NE(find_stem(fixture::biased_fixture(), "needs-context_0"), nullptr);
}

TEST(Csv, EmptyIsHeaderOnly) {
    std::ostringstream a, b;
    lsk::write_rc_csv(a, {});
    lsk::write_diff_csv(b, {});
    EXPECT_EQ(a.str(), "category,r_c_raw,r_c_norm,images\n");
    EXPECT_EQ(b.str(), "category,block,delta_raw,delta_norm,delta_abs\n");
}

TEST(Csv, SingleCategoryRow) {
    ImageSample img{"x", {}, {rect(0, 0, 23, 2, "c")}};
    img.record.entries = {constant_entry(1, 1, 4, 4, {1.0}, {23})};
    std::ostringstream os;
    lsk::write_rc_csv(os, lsk::compute_all_rc({img}).stats);
    EXPECT_EQ(os.str(), "category,r_c_raw,r_c_norm,images\nc,8,1,1\n");
}

TEST(Csv, RoundTripAndOrder) {
    const auto v = fixture::biased_fixture(3);
    auto rc = lsk::compute_all_rc(v).stats;
    std::vector<lsk::BlockSelectionDiff> diffs;
    for (const std::string c : {"needs-context", "local-texture"}) {
        auto d = lsk::compute_selection_diff(v, c);
        diffs.insert(diffs.end(), d.rbegin(), d.rend());
    }
    std::reverse(rc.begin(), rc.end());
    std::stringstream a, b;
    lsk::write_rc_csv(a, rc);
    lsk::write_diff_csv(b, diffs);
    const auto rc2 = lsk::read_rc_csv(a);
    const auto d2 = lsk::read_diff_csv(b);
    ASSERT_EQ(rc2.size(), rc.size());
    ASSERT_EQ(d2.size(), diffs.size());
    EXPECT_EQ(rc2[0].category, "local-texture");
    for (const auto& r : rc2) {
        const auto it = std::find_if(rc.begin(), rc.end(), [&](const auto& x) { return x.category == r.category; });
        ASSERT_NE(it, rc.end());
        EXPECT_NEAR(r.r_c_raw, it->r_c_raw, 1e-9);
        EXPECT_NEAR(r.r_c_norm, it->r_c_norm, 1e-9);
        EXPECT_EQ(r.images, it->images);
    }
    EXPECT_EQ(d2.front().category, "local-texture");
    EXPECT_EQ(d2.front().block(), "B_1_1");
    EXPECT_EQ(d2.back().block(), "B_4_2");
    for (const auto& d : d2) {
        const auto it = std::find_if(diffs.begin(), diffs.end(), [&](const auto& x) {
            return x.category == d.category && x.stage == d.stage && x.depth == d.depth;
        });
        ASSERT_NE(it, diffs.end());
        EXPECT_NEAR(d.delta_raw, it->delta_raw, 1e-9);
        EXPECT_NEAR(d.delta_norm, it->delta_norm, 1e-9);
        EXPECT_NEAR(d.delta_abs, it->delta_abs, 1e-9);
    }
}

TEST(Csv, SinkFailureThrows) {
    std::ostringstream os;
    os.setstate(std::ios::badbit);
    EXPECT_THROW(lsk::write_rc_csv(os, {}), std::runtime_error);
    EXPECT_THROW(lsk::write_diff_csv(os, {}), std::runtime_error);
}

TEST(Csv, BadInputRejected) {
    std::istringstream bad_header("category,raw\n");
    EXPECT_THROW(lsk::read_rc_csv(bad_header), std::runtime_error);
    std::istringstream bad_block("category,block,delta_raw,delta_norm,delta_abs\nc,X_1,0,0,0\n");
    EXPECT_THROW(lsk::read_diff_csv(bad_block), std::runtime_error);
}
