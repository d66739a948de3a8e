#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vlmerge {

enum class DType : std::uint8_t { F32, F16, BF16 };

std::size_t dtype_size(DType dt);
std::string_view dtype_name(DType dt);
// Throws FormatError for anything other than "F32", "F16", "BF16".
DType parse_dtype(std::string_view name);

// Raised for malformed checkpoint files and vocab sidecars.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

// Number of elements for a row-major shape; a 0-d shape holds one element.
std::size_t element_count(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct Tensor {
    DType dtype = DType::F32;
    Shape shape;
    std::vector<std::byte> data;  // little-endian, row-major

    std::size_t numel() const { return element_count(shape); }
    std::size_t expected_bytes() const { return numel() * dtype_size(dtype); }
    bool valid() const;

    // Widened copy of the payload.
    std::vector<float> to_f32() const;
    static Tensor from_f32(std::span<const float> values, Shape shape, DType dtype);

    bool operator==(const Tensor&) const = default;
};

// Token list where line number equals embedding row index.
class Vocab {
public:
    Vocab() = default;
    // Throws FormatError on a duplicate token.
    explicit Vocab(std::vector<std::string> tokens);

    const std::vector<std::string>& tokens() const { return tokens_; }
    std::size_t size() const { return tokens_.size(); }
    std::optional<std::size_t> find(const std::string& token) const;

    // Positional tokens "<row:N>" for checkpoints shipped without a sidecar.
    static Vocab positional(std::size_t rows);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

struct Checkpoint {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;  // "__metadata__" entry
    std::optional<Vocab> vocab;
    std::string source_label;

    const Tensor& at(const std::string& name) const;

    bool operator==(const Checkpoint& other) const {
        return tensors == other.tensors && metadata == other.metadata && vocab == other.vocab;
    }
};

// Parses and validates the header, then loads every payload. Throws FormatError
// with a specific message for each malformed-file case.
Checkpoint read_checkpoint(const std::filesystem::path& path);
Checkpoint parse_checkpoint(std::span<const std::byte> file_bytes);

// Header keys sorted, data packed in header order without gaps.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt);

// Round-to-nearest-even on narrowing; values past the F16 range become +-inf.
Tensor cast_tensor(const Tensor& t, DType target);

Vocab read_vocab(const std::filesystem::path& path);
void write_vocab(const Vocab& vocab, const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace vlmerge
