#include "phasealign/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace phasealign {

FormatError::FormatError(std::string source, std::string reason, size_t offset)
    : DataError(source + ": " + reason + " (at byte " + std::to_string(offset) + ")"),
      source_(std::move(source)), reason_(std::move(reason)), offset_(offset) {}

namespace {

constexpr char kVolumeMagic[4] = {'V', '3', 'D', '1'};
constexpr char kFieldMagic[4] = {'D', 'F', '3', '1'};
constexpr size_t kVolumeHeader = 4 + 1 + 12 + 12;
constexpr size_t kFieldHeader = 4 + 12;

class Writer {
public:
    explicit Writer(size_t reserve) { buf_.reserve(reserve); }
    void bytes(const char* p, size_t n) { buf_.insert(buf_.end(), p, p + n); }
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
    std::vector<uint8_t> take() { return std::move(buf_); }

private:
    std::vector<uint8_t> buf_;
};

class Reader {
public:
    Reader(std::span<const uint8_t> b, const std::string& src) : b_(b), src_(src) {}
    void need(size_t n, const char* what) const {
        if (pos_ + n > b_.size())
            throw FormatError(src_, std::string("truncated while reading ") + what, pos_);
    }
    void magic(const char (&m)[4]) {
        need(4, "magic");
        if (std::memcmp(b_.data(), m, 4) != 0) throw FormatError(src_, "bad magic", 0);
        pos_ = 4;
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return b_[pos_++];
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    size_t pos() const { return pos_; }
    size_t remaining() const { return b_.size() - pos_; }
    const uint8_t* cursor() const { return b_.data() + pos_; }
    void skip(size_t n) { pos_ += n; }
    const std::string& source() const { return src_; }

private:
    std::span<const uint8_t> b_;
    const std::string& src_;
    size_t pos_ = 0;
};

Shape3 read_dims(Reader& r) {
    const uint32_t d = r.u32("dims"), h = r.u32("dims"), w = r.u32("dims");
    if (d == 0 || h == 0 || w == 0) throw FormatError(r.source(), "zero extent in dims", r.pos());
    return {d, h, w};
}

void write_header(Writer& w, VolumeDtype dtype, const Shape3& s, const Spacing& sp) {
    w.bytes(kVolumeMagic, 4);
    w.u8(static_cast<uint8_t>(dtype));
    w.u32(static_cast<uint32_t>(s.d));
    w.u32(static_cast<uint32_t>(s.h));
    w.u32(static_cast<uint32_t>(s.w));
    w.f32(sp.d);
    w.f32(sp.h);
    w.f32(sp.w);
}

struct VolumeHeader {
    VolumeDtype dtype;
    Shape3 shape;
    Spacing spacing;
};

VolumeHeader read_header(Reader& r) {
    r.magic(kVolumeMagic);
    const uint8_t tag = r.u8("dtype");
    if (tag > 1) throw FormatError(r.source(), "unknown dtype tag " + std::to_string(tag), 4);
    VolumeHeader h{static_cast<VolumeDtype>(tag), read_dims(r), {}};
    h.spacing.d = r.f32("spacing");
    h.spacing.h = r.f32("spacing");
    h.spacing.w = r.f32("spacing");
    return h;
}

void require_payload(const Reader& r, uint64_t expected_bytes) {
    if (r.remaining() != expected_bytes)
        throw FormatError(r.source(),
                          "payload is " + std::to_string(r.remaining()) + " bytes, dims require " +
                              std::to_string(expected_bytes),
                          r.pos());
}

} // namespace

std::vector<uint8_t> encode_volume(const Volume& v) {
    Writer w(kVolumeHeader + 4 * v.data().size());
    write_header(w, VolumeDtype::float32, v.shape(), v.spacing());
    for (float x : v.data()) w.f32(x);
    return w.take();
}

std::vector<uint8_t> encode_labels(const LabelMap& l) {
    Writer w(kVolumeHeader + l.data().size());
    write_header(w, VolumeDtype::uint8_labels, l.shape(), l.spacing());
    for (uint8_t x : l.data()) w.u8(x);
    return w.take();
}

std::vector<uint8_t> encode_field(const DeformationField& f) {
    Writer w(kFieldHeader + 4 * f.u.size());
    w.bytes(kFieldMagic, 4);
    w.u32(static_cast<uint32_t>(f.shape.d));
    w.u32(static_cast<uint32_t>(f.shape.h));
    w.u32(static_cast<uint32_t>(f.shape.w));
    for (float x : f.u) w.f32(x);
    return w.take();
}

VolumeDtype peek_dtype(std::span<const uint8_t> bytes, const std::string& source) {
    Reader r(bytes, source);
    return read_header(r).dtype;
}

Volume decode_volume(std::span<const uint8_t> bytes, const std::string& source) {
    Reader r(bytes, source);
    const VolumeHeader h = read_header(r);
    if (h.dtype != VolumeDtype::float32) throw FormatError(source, "expected float32 volume, found label map", 4);
    const uint64_t n = static_cast<uint64_t>(h.shape.voxels());
    require_payload(r, 4 * n);
    std::vector<float> data(n);
    for (auto& x : data) x = r.f32("payload");
    return Volume(h.shape, std::move(data), h.spacing);
}

LabelMap decode_labels(std::span<const uint8_t> bytes, const std::string& source) {
    Reader r(bytes, source);
    const VolumeHeader h = read_header(r);
    if (h.dtype != VolumeDtype::uint8_labels) throw FormatError(source, "expected label map, found float32 volume", 4);
    const uint64_t n = static_cast<uint64_t>(h.shape.voxels());
    require_payload(r, n);
    std::vector<uint8_t> data(r.cursor(), r.cursor() + n);
    for (size_t i = 0; i < n; ++i)
        if (data[i] >= kNumClasses)
            throw FormatError(source, "label value " + std::to_string(data[i]) + " outside {0,1,2,3}", r.pos() + i);
    return LabelMap(h.shape, std::move(data), h.spacing);
}

DeformationField decode_field(std::span<const uint8_t> bytes, const std::string& source) {
    Reader r(bytes, source);
    r.magic(kFieldMagic);
    const Shape3 s = read_dims(r);
    const uint64_t n = 3 * static_cast<uint64_t>(s.voxels());
    require_payload(r, 4 * n);
    std::vector<float> u(n);
    for (auto& x : u) x = r.f32("payload");
    return DeformationField(s, std::move(u));
}

std::vector<uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(std::span<const uint8_t> bytes, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": write failed");
}

Volume read_volume(const std::filesystem::path& path) { return decode_volume(read_bytes(path), path.string()); }
LabelMap read_labels(const std::filesystem::path& path) { return decode_labels(read_bytes(path), path.string()); }
DeformationField read_field(const std::filesystem::path& path) { return decode_field(read_bytes(path), path.string()); }

void write_volume(const Volume& v, const std::filesystem::path& path) { write_bytes(encode_volume(v), path); }
void write_labels(const LabelMap& l, const std::filesystem::path& path) { write_bytes(encode_labels(l), path); }
void write_field(const DeformationField& f, const std::filesystem::path& path) { write_bytes(encode_field(f), path); }

} // namespace phasealign
