#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "phasealign/errors.hpp"
#include "phasealign/field.hpp"
#include "phasealign/volume.hpp"

namespace phasealign {

// .vol3 layout: "V3D1", u8 dtype (0 = float32, 1 = uint8 labels), u32 D,H,W,
// f32 spacing (d,h,w), then D*H*W values with width fastest. Little endian.
// .def3 layout: "DF31", u32 D,H,W, then 3*D*H*W f32, component-major.

enum class VolumeDtype : uint8_t { float32 = 0, uint8_labels = 1 };

/// Thrown for any malformed .vol3 / .def3 payload.
class FormatError : public DataError {
public:
    FormatError(std::string source, std::string reason, size_t offset);
    const std::string& source() const { return source_; }
    const std::string& reason() const { return reason_; }
    size_t offset() const { return offset_; }

private:
    std::string source_;
    std::string reason_;
    size_t offset_;
};

std::vector<uint8_t> encode_volume(const Volume& v);
std::vector<uint8_t> encode_labels(const LabelMap& l);
std::vector<uint8_t> encode_field(const DeformationField& f);

Volume decode_volume(std::span<const uint8_t> bytes, const std::string& source = "<memory>");
LabelMap decode_labels(std::span<const uint8_t> bytes, const std::string& source = "<memory>");
DeformationField decode_field(std::span<const uint8_t> bytes, const std::string& source = "<memory>");

/// Reads only the dtype tag of a .vol3 stream.
VolumeDtype peek_dtype(std::span<const uint8_t> bytes, const std::string& source = "<memory>");

Volume read_volume(const std::filesystem::path& path);
LabelMap read_labels(const std::filesystem::path& path);
DeformationField read_field(const std::filesystem::path& path);

void write_volume(const Volume& v, const std::filesystem::path& path);
void write_labels(const LabelMap& l, const std::filesystem::path& path);
void write_field(const DeformationField& f, const std::filesystem::path& path);

std::vector<uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(std::span<const uint8_t> bytes, const std::filesystem::path& path);

} // namespace phasealign
