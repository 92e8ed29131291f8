#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsk/analysis.hpp"
#include "lsk/backbone.hpp"

namespace lsk {

enum class IoErrorKind { bad_magic, truncated, dim_overflow, shape_mismatch, malformed, io_failure };

inline const char* to_string(IoErrorKind k) {
    switch (k) {
        case IoErrorKind::bad_magic: return "bad_magic";
        case IoErrorKind::truncated: return "truncated";
        case IoErrorKind::dim_overflow: return "dim_overflow";
        case IoErrorKind::shape_mismatch: return "shape_mismatch";
        case IoErrorKind::malformed: return "malformed";
        case IoErrorKind::io_failure: return "io_failure";
    }
    return "unknown";
}

class IoError : public std::runtime_error {
public:
    IoError(IoErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
    IoErrorKind kind() const { return kind_; }

private:
    IoErrorKind kind_;
};

inline constexpr std::array<char, 8> kTensorMagic{'L', 'S', 'K', 'T', '0', '0', '0', '1'};
inline constexpr std::array<char, 8> kWeightsMagic{'L', 'S', 'K', 'W', '0', '0', '0', '1'};
inline constexpr int kWeightsFormatVersion = 1;

namespace io_detail {

static_assert(std::numeric_limits<float>::is_iec559);

// Payloads move in chunks of this many floats; a forged header runs out of
// input long before it can claim much memory.
inline constexpr std::size_t kChunkFloats = std::size_t(1) << 18;

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError(IoErrorKind::io_failure, "write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const std::string& what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        if (is.bad()) throw IoError(IoErrorKind::io_failure, "read failed in " + what);
        throw IoError(IoErrorKind::truncated, what + ": expected " + std::to_string(n) + " bytes, got " +
                                                  std::to_string(is.gcount()));
    }
}

template <typename U>
void put_le(std::ostream& os, U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    write_bytes(os, b, sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& what) {
    unsigned char b[sizeof(U)];
    read_bytes(is, b, sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
    return v;
}

inline void check_magic(std::istream& is, const std::array<char, 8>& magic, const char* what) {
    std::array<char, 8> got{};
    read_bytes(is, got.data(), got.size(), std::string(what) + " magic");
    if (got != magic) throw IoError(IoErrorKind::bad_magic, std::string(what) + ": unrecognized magic");
}

/// Product of dims as an element count whose byte size fits in size_t.
inline std::size_t checked_numel(const std::vector<std::uint64_t>& dims, const std::string& what) {
    std::uint64_t n = 1;
    for (auto d : dims) {
        if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d)
            throw IoError(IoErrorKind::dim_overflow, what + ": element count overflows");
        n *= d;
    }
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(float) || n > std::numeric_limits<std::size_t>::max() / 8)
        throw IoError(IoErrorKind::dim_overflow, what + ": payload size overflows");
    return static_cast<std::size_t>(n);
}

template <typename T>
void write_floats(std::ostream& os, std::span<const T> values) {
    std::vector<unsigned char> buf;
    buf.reserve(std::min(values.size(), kChunkFloats) * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(static_cast<float>(values[i]));
        for (int b = 0; b < 4; ++b) buf.push_back(static_cast<unsigned char>(u >> (8 * b)));
        if (buf.size() == kChunkFloats * 4 || i + 1 == values.size()) {
            write_bytes(os, buf.data(), buf.size());
            buf.clear();
        }
    }
}

inline std::vector<float> read_floats(std::istream& is, std::size_t count, const std::string& what) {
    std::vector<float> out;
    std::vector<unsigned char> buf;
    while (out.size() < count) {
        const std::size_t take = std::min(kChunkFloats, count - out.size());
        buf.resize(take * 4);
        read_bytes(is, buf.data(), buf.size(), what + " payload");
        out.reserve(out.size() + take);
        for (std::size_t i = 0; i < take; ++i) {
            std::uint32_t u = 0;
            for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
            out.push_back(std::bit_cast<float>(u));
        }
    }
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(IoErrorKind::io_failure, "cannot open " + path.string() + " for reading");
    return f;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoErrorKind::io_failure, "cannot open " + path.string() + " for writing");
    return f;
}

inline void expect_eof(std::istream& is, const std::filesystem::path& path) {
    if (is.peek() != std::char_traits<char>::eof())
        throw IoError(IoErrorKind::malformed, path.string() + ": trailing bytes after payload");
}

inline void close_out(std::ofstream& f, const std::filesystem::path& path) {
    f.close();
    if (!f) throw IoError(IoErrorKind::io_failure, "writing " + path.string() + " failed");
}

}  // namespace io_detail

// ---- LSKT ---------------------------------------------------------------

template <typename T>
void write_tensor(std::ostream& os, const Tensor4<T>& t) {
    io_detail::write_bytes(os, kTensorMagic.data(), kTensorMagic.size());
    for (auto d : dims_of(t)) io_detail::put_le<std::uint64_t>(os, d);
    io_detail::write_floats<T>(os, t.span());
}

inline Tensor4<float> read_tensor(std::istream& is) {
    io_detail::check_magic(is, kTensorMagic, "LSKT");
    std::vector<std::uint64_t> dims(4);
    for (auto& d : dims) d = io_detail::get_le<std::uint64_t>(is, "LSKT header");
    const std::size_t numel = io_detail::checked_numel(dims, "LSKT");
    if (numel == 0) throw IoError(IoErrorKind::malformed, "LSKT: zero-sized dimension");
    auto data = io_detail::read_floats(is, numel, "LSKT");
    return Tensor4<float>(Shape4{dims[0], dims[1], dims[2], dims[3]}, std::move(data));
}

template <typename T>
void write_tensor_file(const std::filesystem::path& path, const Tensor4<T>& t) {
    auto f = io_detail::open_out(path);
    write_tensor(f, t);
    io_detail::close_out(f, path);
}

inline Tensor4<float> read_tensor_file(const std::filesystem::path& path) {
    auto f = io_detail::open_in(path);
    auto t = read_tensor(f);
    io_detail::expect_eof(f, path);
    return t;
}

// ---- LSKW ---------------------------------------------------------------

struct NamedTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

/// Tensors in file order.
using WeightSet = std::vector<NamedTensor>;

/// Manifest: {"format_version": 1, "payload_bytes": B,
///            "tensors": [{"name": ..., "offset": bytes, "shape": [...]}, ...]}
/// Offsets are relative to the start of the payload.
inline void write_weights(std::ostream& os, const WeightSet& w) {
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    std::set<std::string> seen;
    for (const auto& t : w) {
        require(seen.insert(t.name).second, "write_weights: duplicate tensor name " + t.name);
        std::vector<std::uint64_t> dims(t.shape.begin(), t.shape.end());
        require(io_detail::checked_numel(dims, t.name) == t.data.size(),
                "write_weights: shape of " + t.name + " does not match its data");
        tensors.push_back({{"name", t.name}, {"offset", offset}, {"shape", t.shape}});
        offset += 4 * t.data.size();
    }
    nlohmann::ordered_json manifest{
        {"format_version", kWeightsFormatVersion}, {"payload_bytes", offset}, {"tensors", tensors}};
    const std::string text = manifest.dump();
    require(text.size() <= std::numeric_limits<std::uint32_t>::max(), "write_weights: manifest too large");
    io_detail::write_bytes(os, kWeightsMagic.data(), kWeightsMagic.size());
    io_detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
    io_detail::write_bytes(os, text.data(), text.size());
    for (const auto& t : w) io_detail::write_floats<float>(os, t.data);
}

namespace io_detail {

inline IoError bad_manifest(const std::string& why) { return IoError(IoErrorKind::malformed, "LSKW manifest: " + why); }

inline std::uint64_t manifest_uint(const nlohmann::json& j, const std::string& what) {
    if (!j.is_number_unsigned()) throw bad_manifest(what + " must be a non-negative integer");
    return j.get<std::uint64_t>();
}

struct ManifestEntry {
    std::string name;
    std::uint64_t offset = 0;
    std::uint64_t bytes = 0;
    std::vector<std::size_t> shape;
};

inline std::vector<ManifestEntry> parse_manifest(const std::string& text, std::uint64_t& payload_bytes) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw bad_manifest("not a JSON object");
    if (!j.contains("format_version") || manifest_uint(j["format_version"], "format_version") != kWeightsFormatVersion)
        throw bad_manifest("unsupported format_version");
    if (!j.contains("payload_bytes") || !j.contains("tensors") || !j["tensors"].is_array())
        throw bad_manifest("missing payload_bytes or tensors");
    payload_bytes = manifest_uint(j["payload_bytes"], "payload_bytes");
    std::vector<ManifestEntry> out;
    std::set<std::string> names;
    for (const auto& t : j["tensors"]) {
        if (!t.is_object() || !t.contains("name") || !t["name"].is_string() || !t.contains("offset") ||
            !t.contains("shape") || !t["shape"].is_array())
            throw bad_manifest("tensor entry needs name, offset and shape");
        ManifestEntry e;
        e.name = t["name"].get<std::string>();
        if (e.name.empty() || !names.insert(e.name).second) throw bad_manifest("empty or duplicate name '" + e.name + "'");
        e.offset = manifest_uint(t["offset"], e.name + ".offset");
        if (e.offset % 4) throw bad_manifest(e.name + ": offset is not a multiple of 4");
        std::vector<std::uint64_t> dims;
        for (const auto& d : t["shape"]) dims.push_back(manifest_uint(d, e.name + ".shape"));
        if (dims.empty()) throw bad_manifest(e.name + ": empty shape");
        const std::size_t numel = checked_numel(dims, "LSKW tensor " + e.name);
        e.bytes = 4 * static_cast<std::uint64_t>(numel);
        e.shape.assign(dims.begin(), dims.end());
        out.push_back(std::move(e));
    }
    // offsets must tile [0, payload_bytes) without overlap or gaps
    std::vector<const ManifestEntry*> by_offset;
    for (const auto& e : out) by_offset.push_back(&e);
    std::sort(by_offset.begin(), by_offset.end(), [](auto a, auto b) { return a->offset < b->offset; });
    std::uint64_t cursor = 0;
    for (const auto* e : by_offset) {
        if (e->offset != cursor) throw bad_manifest(e->name + ": overlapping or non-contiguous offset");
        if (e->bytes > payload_bytes - cursor) throw bad_manifest(e->name + ": extends past payload");
        cursor += e->bytes;
    }
    if (cursor != payload_bytes) throw bad_manifest("payload_bytes does not match the tensors");
    return out;
}

}  // namespace io_detail

inline WeightSet read_weights(std::istream& is) {
    io_detail::check_magic(is, kWeightsMagic, "LSKW");
    const auto len = io_detail::get_le<std::uint32_t>(is, "LSKW manifest length");
    std::string text;
    while (text.size() < len) {
        const std::size_t take = std::min<std::size_t>(len - text.size(), io_detail::kChunkFloats);
        const std::size_t old = text.size();
        text.resize(old + take);
        io_detail::read_bytes(is, text.data() + old, take, "LSKW manifest");
    }
    std::uint64_t payload = 0;
    const auto entries = io_detail::parse_manifest(text, payload);
    const auto data = io_detail::read_floats(is, static_cast<std::size_t>(payload / 4), "LSKW");
    WeightSet out;
    for (const auto& e : entries) {
        const auto first = data.begin() + static_cast<std::ptrdiff_t>(e.offset / 4);
        out.push_back({e.name, e.shape, std::vector<float>(first, first + static_cast<std::ptrdiff_t>(e.bytes / 4))});
    }
    return out;
}

inline void write_weights_file(const std::filesystem::path& path, const WeightSet& w) {
    auto f = io_detail::open_out(path);
    write_weights(f, w);
    io_detail::close_out(f, path);
}

inline WeightSet read_weights_file(const std::filesystem::path& path) {
    auto f = io_detail::open_in(path);
    auto w = read_weights(f);
    io_detail::expect_eof(f, path);
    return w;
}

/// Every stored tensor, trainable or not, in visit order.
template <typename P>
WeightSet to_weight_set(const P& params) {
    WeightSet out;
    auto fn = [&](const std::string& name, const std::vector<std::size_t>& shape, auto span, SlotKind) {
        out.push_back({name, shape, std::vector<float>(span.begin(), span.end())});
    };
    visit(params, fn);
    return out;
}

/// Checks names and shapes against the configuration before copying.
inline BackboneParams<float> backbone_from_weights(const WeightSet& w, const BackboneConfig& cfg) {
    const auto expected = expected_tensor_shapes(cfg);
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : w) {
        const auto it = expected.find(t.name);
        if (it == expected.end())
            throw IoError(IoErrorKind::shape_mismatch, "tensor " + t.name + " is not part of backbone " + cfg.name);
        if (it->second != t.shape) {
            std::ostringstream os;
            os << "tensor " << t.name << " has shape [";
            for (std::size_t i = 0; i < t.shape.size(); ++i) os << (i ? "," : "") << t.shape[i];
            os << "], backbone " << cfg.name << " expects [";
            for (std::size_t i = 0; i < it->second.size(); ++i) os << (i ? "," : "") << it->second[i];
            os << "]";
            throw IoError(IoErrorKind::shape_mismatch, os.str());
        }
        by_name[t.name] = &t;
    }
    for (const auto& [name, shape] : expected)
        if (!by_name.count(name)) throw IoError(IoErrorKind::shape_mismatch, "tensor " + name + " is missing");
    BackboneParams<float> p(cfg);
    auto fill = [&](const std::string& name, const std::vector<std::size_t>&, std::span<float> s, SlotKind) {
        const auto& src = by_name.at(name)->data;
        std::copy(src.begin(), src.end(), s.begin());
    };
    visit(p, fill);
    return p;
}

// ---- PGM / PPM ----------------------------------------------------------

/// Binary P5 (grayscale, replicated to 3 channels) or P6, scaled by 1/maxval.
inline Tensor4<float> read_image(std::istream& is) {
    char m[2] = {0, 0};
    io_detail::read_bytes(is, m, 2, "image magic");
    if (m[0] != 'P' || (m[1] != '5' && m[1] != '6'))
        throw IoError(IoErrorKind::bad_magic, "image: only binary PGM (P5) and PPM (P6) are supported");
    const bool color = m[1] == '6';
    auto header_uint = [&](const char* what) -> std::uint64_t {
        int ch = is.get();
        while (ch != EOF && (std::isspace(ch) || ch == '#')) {
            if (ch == '#')
                while (ch != EOF && ch != '\n') ch = is.get();
            ch = is.get();
        }
        if (ch == EOF) throw IoError(IoErrorKind::truncated, std::string("image header: missing ") + what);
        if (!std::isdigit(ch)) throw IoError(IoErrorKind::malformed, std::string("image header: bad ") + what);
        std::uint64_t v = 0;
        for (; ch != EOF && std::isdigit(ch); ch = is.get()) {
            if (v > (std::numeric_limits<std::uint32_t>::max() - 9) / 10)
                throw IoError(IoErrorKind::dim_overflow, std::string("image header: ") + what + " too large");
            v = v * 10 + static_cast<std::uint64_t>(ch - '0');
        }
        if (ch == EOF) throw IoError(IoErrorKind::truncated, "image header ends early");
        if (!std::isspace(ch)) throw IoError(IoErrorKind::malformed, std::string("image header: bad ") + what);
        return v;
    };
    const auto w = header_uint("width"), h = header_uint("height"), maxval = header_uint("maxval");
    if (w == 0 || h == 0) throw IoError(IoErrorKind::malformed, "image: zero width or height");
    if (maxval == 0 || maxval > 255) throw IoError(IoErrorKind::malformed, "image: only 8-bit maxval is supported");
    const std::size_t ch = color ? 3 : 1;
    io_detail::checked_numel({w, h, ch}, "image");
    Tensor4<float> t(Shape4{1, 3, h, w});
    std::vector<unsigned char> row(w * ch);
    for (std::size_t y = 0; y < h; ++y) {
        io_detail::read_bytes(is, row.data(), row.size(), "image pixels");
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                t(0, c, y, x) = static_cast<float>(row[x * ch + (color ? c : 0)]) / static_cast<float>(maxval);
    }
    return t;
}

inline Tensor4<float> read_image_file(const std::filesystem::path& path) {
    auto f = io_detail::open_in(path);
    return read_image(f);
}

/// LSKT or P5/P6, chosen by the first bytes of the file.
inline Tensor4<float> read_input_file(const std::filesystem::path& path) {
    auto f = io_detail::open_in(path);
    const int c = f.peek();
    f.close();
    return c == 'P' ? read_image_file(path) : read_tensor_file(path);
}

// ---- mask records -------------------------------------------------------

/// One directory per image: `B_<stage>_<depth>.lskt` holding the (n, N, h, w)
/// masks of a block, and manifest.json naming each mask channel
/// `B_<stage>_<depth>_<n>` together with its receptive field.
template <typename T>
void write_mask_record(const std::filesystem::path& dir, const ActivationRecord<T>& rec) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError(IoErrorKind::io_failure, "cannot create " + dir.string() + ": " + ec.message());
    nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
    for (const auto& e : rec.entries) {
        const std::string file = e.key() + ".lskt";
        write_tensor_file(dir / file, e.masks);
        nlohmann::ordered_json masks = nlohmann::ordered_json::array();
        for (std::size_t n = 0; n < e.masks.c(); ++n) masks.push_back(e.key() + "_" + std::to_string(n));
        blocks.push_back(
            {{"block", e.key()}, {"stage", e.stage}, {"depth", e.depth}, {"file", file}, {"rf", e.rf}, {"masks", masks}});
    }
    const nlohmann::ordered_json manifest{{"format_version", 1}, {"blocks", blocks}};
    auto f = io_detail::open_out(dir / "manifest.json");
    f << manifest.dump(2) << '\n';
    io_detail::close_out(f, dir / "manifest.json");
}

inline ActivationRecord<double> read_mask_record(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    auto f = io_detail::open_in(path);
    const auto j = nlohmann::json::parse(f, nullptr, false);
    auto bad = [&](const std::string& why) { return IoError(IoErrorKind::malformed, path.string() + ": " + why); };
    if (j.is_discarded() || !j.is_object() || !j.contains("blocks") || !j["blocks"].is_array())
        throw bad("expected an object with a blocks array");
    ActivationRecord<double> rec;
    for (const auto& b : j["blocks"]) {
        if (!b.is_object() || !b.contains("stage") || !b["stage"].is_number_unsigned() || !b.contains("depth") ||
            !b["depth"].is_number_unsigned() || !b.contains("file") || !b["file"].is_string() || !b.contains("rf") ||
            !b["rf"].is_array())
            throw bad("block entry needs stage, depth, file and rf");
        MaskEntry<double> e;
        e.stage = b["stage"].get<std::size_t>();
        e.depth = b["depth"].get<std::size_t>();
        for (const auto& r : b["rf"]) {
            if (!r.is_number_unsigned()) throw bad(e.key() + ": rf values must be non-negative integers");
            e.rf.push_back(r.get<std::size_t>());
        }
        const std::filesystem::path file = b["file"].get<std::string>();
        if (file.has_parent_path() || file.is_absolute()) throw bad(e.key() + ": file must be a bare name");
        e.masks = read_tensor_file(dir / file).cast<double>();
        if (e.masks.c() != e.rf.size())
            throw IoError(IoErrorKind::shape_mismatch, (dir / file).string() + " holds " + std::to_string(e.masks.c()) +
                                                           " masks but the manifest lists " +
                                                           std::to_string(e.rf.size()) + " RF values");
        rec.entries.push_back(std::move(e));
    }
    return rec;
}

/// Pairs `<masks>/<stem>/manifest.json` with `<annotations>/<stem>.txt`.
/// Every mask directory needs an annotation file and vice versa.
struct AnalysisInputs {
    std::vector<ImageSample> images;
    std::vector<std::string> warnings;
};

inline AnalysisInputs load_analysis_inputs(const std::filesystem::path& masks, const std::filesystem::path& annotations) {
    namespace fs = std::filesystem;
    for (const auto& d : {masks, annotations})
        if (!fs::is_directory(d)) throw IoError(IoErrorKind::io_failure, d.string() + " is not a directory");
    std::set<std::string> mask_stems, ann_stems;
    for (const auto& e : fs::directory_iterator(masks))
        if (e.is_directory() && fs::exists(e.path() / "manifest.json")) mask_stems.insert(e.path().filename().string());
    for (const auto& e : fs::directory_iterator(annotations))
        if (e.is_regular_file() && e.path().extension() == ".txt") ann_stems.insert(e.path().stem().string());
    for (const auto& s : mask_stems)
        if (!ann_stems.count(s)) throw IoError(IoErrorKind::malformed, "no annotation file for mask directory " + s);
    for (const auto& s : ann_stems)
        if (!mask_stems.count(s)) throw IoError(IoErrorKind::malformed, "no mask directory for annotation file " + s);
    if (mask_stems.empty()) throw IoError(IoErrorKind::malformed, masks.string() + " holds no mask directories");
    AnalysisInputs out;
    for (const auto& stem : mask_stems) {
        ImageSample img;
        img.stem = stem;
        img.record = read_mask_record(masks / stem);
        for (const auto& e : img.record.entries)
            if (e.masks.n() != 1)
                throw IoError(IoErrorKind::shape_mismatch,
                              stem + "/" + e.key() + ": analysis expects one image per mask directory, found a batch of " +
                                  std::to_string(e.masks.n()));
        auto f = io_detail::open_in(annotations / (stem + ".txt"));
        auto ann = parse_annotations(f);
        if (ann.malformed) out.warnings.push_back(stem + ": " + std::to_string(ann.malformed) + " malformed lines skipped");
        if (ann.degenerate)
            out.warnings.push_back(stem + ": " + std::to_string(ann.degenerate) + " degenerate boxes skipped");
        img.boxes = std::move(ann.boxes);
        out.images.push_back(std::move(img));
    }
    return out;
}

}  // namespace lsk
