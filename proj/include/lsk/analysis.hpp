#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "lsk/backbone.hpp"

namespace lsk {

struct Point {
    double x = 0;
    double y = 0;
};

/// Absolute shoelace area.
inline double polygon_area(std::span<const Point> v) {
    double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Point& a = v[i];
        const Point& b = v[(i + 1) % v.size()];
        s += a.x * b.y - b.x * a.y;
    }
    return std::abs(s) / 2;
}

struct OrientedBox {
    std::array<Point, 4> vertices;
    std::string category;
    int difficulty = 0;

    double area() const { return polygon_area(vertices); }
};

struct AnnotationSet {
    std::vector<OrientedBox> boxes;
    std::size_t malformed = 0;   // lines that look like boxes but do not parse
    std::size_t degenerate = 0;  // zero-area polygons
};

namespace detail {
inline bool parse_double(const std::string& tok, double& out) {
    std::istringstream is(tok);
    is >> out;
    return !is.fail() && is.peek() == std::char_traits<char>::eof() && std::isfinite(out);
}
}  // namespace detail

/// DOTA text: `x1 y1 x2 y2 x3 y3 x4 y4 category difficulty` per line.
/// Lines whose first token is not numeric (e.g. `imagesource:`, `gsd:`) and
/// blank lines are skipped without a warning.
inline AnnotationSet parse_annotations(std::istream& in) {
    if (!in) throw std::runtime_error("parse_annotations: unreadable input stream");
    AnnotationSet out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        double first = 0;
        if (tok.empty() || !detail::parse_double(tok[0], first)) continue;
        OrientedBox box;
        bool ok = tok.size() == 9 || tok.size() == 10;
        for (std::size_t i = 0; ok && i < 8; ++i) {
            double v = 0;
            ok = detail::parse_double(tok[i], v);
            (i % 2 ? box.vertices[i / 2].y : box.vertices[i / 2].x) = v;
        }
        if (ok) {
            double dummy = 0;
            ok = !detail::parse_double(tok[8], dummy);  // category must not be a number
            box.category = tok[8];
        }
        if (ok && tok.size() == 10) {
            ok = tok[9] == "0" || tok[9] == "1";
            box.difficulty = tok[9] == "1";
        }
        if (!ok) {
            ++out.malformed;
            continue;
        }
        if (!(box.area() > 0)) {
            ++out.degenerate;
            continue;
        }
        out.boxes.push_back(std::move(box));
    }
    if (in.bad()) throw std::runtime_error("parse_annotations: read error");
    return out;
}

inline AnnotationSet parse_annotations(const std::string& text) {
    std::istringstream is(text);
    return parse_annotations(is);
}

/// One analysed image: its captured masks and its ground-truth boxes.
struct ImageSample {
    std::string stem;
    ActivationRecord<double> record;
    std::vector<OrientedBox> boxes;
};

struct CategoryStats {
    std::string category;
    double r_c_raw = 0;
    double r_c_norm = 0;
    std::size_t images = 0;
};

struct BlockSelectionDiff {
    std::string category;
    std::size_t stage = 0;
    std::size_t depth = 0;
    double delta_raw = 0;   // signed mean of (larger - smaller)
    double delta_norm = 0;  // min-max across the category's blocks
    double delta_abs = 0;   // mean of |larger - smaller|

    std::string block() const { return "B_" + std::to_string(stage) + "_" + std::to_string(depth); }
};

class UnsupportedPlan : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// (v - min) / (max - min); a single value, or all-equal values, map to 1.
inline std::vector<double> normalize_min_max(const std::vector<double>& v) {
    std::vector<double> out(v.size(), 1.0);
    if (v.size() < 2) return out;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (!(*hi > *lo)) return out;
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / (*hi - *lo);
    return out;
}

/// Category of an image whose boxes all share one label; empty otherwise.
inline std::string single_category(const std::vector<OrientedBox>& boxes) {
    if (boxes.empty()) return {};
    for (const auto& b : boxes)
        if (b.category != boxes.front().category) return {};
    return boxes.front().category;
}

/// A_i: sum over blocks and kernels of RF_n times the spatial sum of mask n,
/// at each block's own resolution.
inline double selective_rf_area(const ActivationRecord<double>& rec) {
    double a = 0;
    for (const auto& e : rec.entries) {
        require(e.rf.size() == e.masks.c(), "selective_rf_area: " + e.key() + " has " + std::to_string(e.masks.c()) +
                                                " masks but " + std::to_string(e.rf.size()) + " RF values");
        for (std::size_t n = 0; n < e.masks.c(); ++n) {
            double s = 0;
            for (std::size_t b = 0; b < e.masks.n(); ++b) {
                const double* p = e.masks.plane(b, n);
                for (std::size_t i = 0; i < e.masks.plane_size(); ++i) s += p[i];
            }
            a += static_cast<double>(e.rf[n]) * s;
        }
    }
    return a;
}

inline double box_area(const std::vector<OrientedBox>& boxes) {
    double b = 0;
    for (const auto& box : boxes) b += box.area();
    return b;
}

struct RcResult {
    std::vector<CategoryStats> stats;   // sorted by category, normalized
    std::vector<std::string> notices;   // excluded categories and skipped images
};

/// R_c for one category, raw (normalized value left at 1). Throws when no
/// eligible image exists.
inline CategoryStats compute_rc(const std::vector<ImageSample>& images, const std::string& category,
                                std::vector<std::string>* notices = nullptr) {
    CategoryStats st{category, 0, 1, 0};
    double sum = 0;
    for (const auto& img : images) {
        if (single_category(img.boxes) != category) continue;
        const double b = box_area(img.boxes);
        if (!(b > 0)) {
            if (notices) notices->push_back("image " + img.stem + ": zero total box area, skipped");
            continue;
        }
        sum += selective_rf_area(img.record) / b;
        ++st.images;
    }
    if (st.images == 0) throw std::invalid_argument("compute_rc: no image contains only category '" + category + "'");
    st.r_c_raw = sum / static_cast<double>(st.images);
    return st;
}

/// R_c for every category seen in the annotations, min-max normalized.
inline RcResult compute_all_rc(const std::vector<ImageSample>& images) {
    std::set<std::string> categories;
    for (const auto& img : images)
        for (const auto& b : img.boxes) categories.insert(b.category);
    RcResult r;
    for (const auto& c : categories) {
        try {
            r.stats.push_back(compute_rc(images, c, &r.notices));
        } catch (const std::invalid_argument&) {
            r.notices.push_back("category " + c + ": no single-category image, excluded");
        }
    }
    std::vector<double> raw;
    for (const auto& s : r.stats) raw.push_back(s.r_c_raw);
    const auto norm = normalize_min_max(raw);
    for (std::size_t i = 0; i < r.stats.size(); ++i) r.stats[i].r_c_norm = norm[i];
    return r;
}

/// Per block: mean over eligible images of the spatial mean of
/// (larger-RF mask - smaller-RF mask). Needs two masks per block.
inline std::vector<BlockSelectionDiff> compute_selection_diff(const std::vector<ImageSample>& images,
                                                              const std::string& category) {
    std::map<std::pair<std::size_t, std::size_t>, std::array<double, 3>> acc;  // signed, abs, count
    for (const auto& img : images) {
        if (single_category(img.boxes) != category) continue;
        for (const auto& e : img.record.entries) {
            if (e.masks.c() != 2 || e.rf.size() != 2)
                throw UnsupportedPlan("compute_selection_diff: " + e.key() + " has " + std::to_string(e.masks.c()) +
                                      " masks; the selection difference needs exactly 2");
            const std::size_t large = e.rf[1] >= e.rf[0] ? 1 : 0, small = 1 - large;
            double s = 0, a = 0;
            for (std::size_t b = 0; b < e.masks.n(); ++b) {
                const double* pl = e.masks.plane(b, large);
                const double* ps = e.masks.plane(b, small);
                for (std::size_t i = 0; i < e.masks.plane_size(); ++i) {
                    s += pl[i] - ps[i];
                    a += std::abs(pl[i] - ps[i]);
                }
            }
            const double count = static_cast<double>(e.masks.n() * e.masks.plane_size());
            auto& slot = acc[{e.stage, e.depth}];
            slot[0] += s / count;
            slot[1] += a / count;
            slot[2] += 1;
        }
    }
    std::vector<BlockSelectionDiff> out;
    for (const auto& [key, v] : acc) out.push_back({category, key.first, key.second, v[0] / v[2], 0, v[1] / v[2]});
    std::vector<double> raw;
    for (const auto& d : out) raw.push_back(d.delta_raw);
    const auto norm = normalize_min_max(raw);
    for (std::size_t i = 0; i < out.size(); ++i) out[i].delta_norm = norm[i];
    return out;
}

/// Mean signed difference over a category's blocks, for ranking categories.
inline double mean_selection_diff(const std::vector<BlockSelectionDiff>& diffs) {
    if (diffs.empty()) return 0;
    double s = 0;
    for (const auto& d : diffs) s += d.delta_raw;
    return s / static_cast<double>(diffs.size());
}

inline const char* kRcCsvHeader = "category,r_c_raw,r_c_norm,images";
inline const char* kDiffCsvHeader = "category,block,delta_raw,delta_norm,delta_abs";

namespace detail {
inline std::string csv_number(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline void check_sink(std::ostream& os, const char* what) {
    if (!os) throw std::runtime_error(std::string(what) + ": write failed");
}
}  // namespace detail

/// Rows sorted by category.
inline void write_rc_csv(std::ostream& os, std::vector<CategoryStats> stats) {
    std::sort(stats.begin(), stats.end(), [](const auto& a, const auto& b) { return a.category < b.category; });
    os << kRcCsvHeader << '\n';
    for (const auto& s : stats)
        os << s.category << ',' << detail::csv_number(s.r_c_raw) << ',' << detail::csv_number(s.r_c_norm) << ','
           << s.images << '\n';
    detail::check_sink(os, "write_rc_csv");
}

/// Rows sorted by category, then stage and depth.
inline void write_diff_csv(std::ostream& os, std::vector<BlockSelectionDiff> diffs) {
    std::sort(diffs.begin(), diffs.end(), [](const auto& a, const auto& b) {
        return std::tie(a.category, a.stage, a.depth) < std::tie(b.category, b.stage, b.depth);
    });
    os << kDiffCsvHeader << '\n';
    for (const auto& d : diffs)
        os << d.category << ',' << d.block() << ',' << detail::csv_number(d.delta_raw) << ','
           << detail::csv_number(d.delta_norm) << ',' << detail::csv_number(d.delta_abs) << '\n';
    detail::check_sink(os, "write_diff_csv");
}

inline std::vector<CategoryStats> read_rc_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kRcCsvHeader) throw std::runtime_error("read_rc_csv: bad header");
    std::vector<CategoryStats> out;
    while (std::getline(is, line)) {
        const auto c = detail::split_csv_line(line);
        if (c.size() != 4) throw std::runtime_error("read_rc_csv: bad row '" + line + "'");
        out.push_back({c[0], std::stod(c[1]), std::stod(c[2]), static_cast<std::size_t>(std::stoull(c[3]))});
    }
    return out;
}

inline std::vector<BlockSelectionDiff> read_diff_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kDiffCsvHeader) throw std::runtime_error("read_diff_csv: bad header");
    std::vector<BlockSelectionDiff> out;
    while (std::getline(is, line)) {
        const auto c = detail::split_csv_line(line);
        BlockSelectionDiff d;
        if (c.size() != 5 || std::sscanf(c[1].c_str(), "B_%zu_%zu", &d.stage, &d.depth) != 2)
            throw std::runtime_error("read_diff_csv: bad row '" + line + "'");
        d.category = c[0];
        d.delta_raw = std::stod(c[2]);
        d.delta_norm = std::stod(c[3]);
        d.delta_abs = std::stod(c[4]);
        out.push_back(d);
    }
    return out;
}

}  // namespace lsk
