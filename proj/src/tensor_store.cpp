#include "vlmerge/tensor_store.hpp"

#include "vlmerge/half.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

namespace vlmerge {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian");

using nlohmann::json;

std::size_t dtype_size(DType dt) {
    switch (dt) {
    case DType::F32: return 4;
    case DType::F16: return 2;
    case DType::BF16: return 2;
    }
    return 0;
}

std::string_view dtype_name(DType dt) {
    switch (dt) {
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    }
    return "?";
}

DType parse_dtype(std::string_view name) {
    if (name == "F32") return DType::F32;
    if (name == "F16") return DType::F16;
    if (name == "BF16") return DType::BF16;
    throw FormatError(fmt::format("unknown dtype '{}'", name));
}

std::size_t element_count(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ","));
}

bool Tensor::valid() const {
    if (std::any_of(shape.begin(), shape.end(), [](std::int64_t d) { return d < 0; })) {
        return false;
    }
    return data.size() == expected_bytes();
}

std::vector<float> Tensor::to_f32() const {
    const std::size_t n = numel();
    std::vector<float> out(n);
    switch (dtype) {
    case DType::F32:
        std::memcpy(out.data(), data.data(), n * 4);
        break;
    case DType::F16:
    case DType::BF16: {
        const bool is_half = dtype == DType::F16;
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t bits;
            std::memcpy(&bits, data.data() + 2 * i, 2);
            out[i] = is_half ? f16_bits_to_f32(bits) : bf16_bits_to_f32(bits);
        }
        break;
    }
    }
    return out;
}

Tensor Tensor::from_f32(std::span<const float> values, Shape shape, DType dtype) {
    Tensor t;
    t.dtype = dtype;
    t.shape = std::move(shape);
    if (element_count(t.shape) != values.size()) {
        throw std::invalid_argument(fmt::format("from_f32: {} values do not fill shape {}",
                                                values.size(), shape_to_string(t.shape)));
    }
    t.data.resize(values.size() * dtype_size(dtype));
    switch (dtype) {
    case DType::F32:
        std::memcpy(t.data.data(), values.data(), values.size() * 4);
        break;
    case DType::F16:
    case DType::BF16: {
        const bool is_half = dtype == DType::F16;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const std::uint16_t bits = is_half ? f32_to_f16_bits(values[i]) : f32_to_bf16_bits(values[i]);
            std::memcpy(t.data.data() + 2 * i, &bits, 2);
        }
        break;
    }
    }
    return t;
}

Tensor cast_tensor(const Tensor& t, DType target) {
    if (t.dtype == target) {
        return t;
    }
    const auto values = t.to_f32();
    return Tensor::from_f32(values, t.shape, target);
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        auto [it, inserted] = index_.emplace(tokens_[i], i);
        if (!inserted) {
            throw FormatError(fmt::format("duplicate token '{}' at rows {} and {}", tokens_[i], it->second, i));
        }
    }
}

std::optional<std::size_t> Vocab::find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

Vocab Vocab::positional(std::size_t rows) {
    std::vector<std::string> tokens;
    tokens.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        tokens.push_back(fmt::format("<row:{}>", i));
    }
    return Vocab(std::move(tokens));
}

const Tensor& Checkpoint::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw std::out_of_range(fmt::format("no tensor named '{}' in {}", name, source_label));
    }
    return it->second;
}

namespace {

std::uint64_t load_u64(const std::byte* p) {
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    return v;
}

std::uint64_t require_uint(const json& v, const std::string& name, const char* what) {
    if (v.is_number_unsigned()) {
        return v.get<std::uint64_t>();
    }
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    throw FormatError(fmt::format("tensor '{}': {} must hold non-negative integers", name, what));
}

struct Extent {
    std::uint64_t begin;
    std::uint64_t end;
    std::string name;
};

}  // namespace

Checkpoint parse_checkpoint(std::span<const std::byte> bytes) {
    if (bytes.size() < 8) {
        throw FormatError(fmt::format("file too short for header length ({} bytes)", bytes.size()));
    }
    const std::uint64_t header_len = load_u64(bytes.data());
    if (header_len > bytes.size() - 8) {
        throw FormatError(fmt::format("header length {} exceeds file size {}", header_len, bytes.size()));
    }
    const std::string_view header_text(reinterpret_cast<const char*>(bytes.data() + 8), header_len);

    // nlohmann keeps the last of duplicate keys; catch them while parsing.
    std::set<std::string> seen;
    std::string duplicate;
    auto on_event = [&](int depth, json::parse_event_t event, json& parsed) {
        if (depth == 1 && event == json::parse_event_t::key) {
            auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) {
                duplicate = key;
            }
        }
        return true;
    };

    json header;
    try {
        header = json::parse(header_text, on_event);
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("malformed header JSON: {}", e.what()));
    }
    if (!duplicate.empty()) {
        throw FormatError(fmt::format("duplicate tensor name '{}'", duplicate));
    }
    if (!header.is_object()) {
        throw FormatError("header is not a JSON object");
    }

    const std::span<const std::byte> region = bytes.subspan(8 + header_len);
    Checkpoint ckpt;
    std::vector<Extent> extents;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) {
                throw FormatError("__metadata__ must map strings to strings");
            }
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) {
                    throw FormatError(fmt::format("__metadata__ value for '{}' is not a string", k));
                }
                ckpt.metadata.emplace(k, v.get<std::string>());
            }
            continue;
        }
        if (!entry.is_object()) {
            throw FormatError(fmt::format("tensor '{}': entry is not an object", name));
        }
        for (const char* field : {"dtype", "shape", "data_offsets"}) {
            if (!entry.contains(field)) {
                throw FormatError(fmt::format("tensor '{}': missing field '{}'", name, field));
            }
        }
        if (!entry["dtype"].is_string()) {
            throw FormatError(fmt::format("tensor '{}': dtype is not a string", name));
        }
        Tensor t;
        t.dtype = parse_dtype(entry["dtype"].get<std::string>());

        const auto& shape = entry["shape"];
        if (!shape.is_array()) {
            throw FormatError(fmt::format("tensor '{}': shape is not an array", name));
        }
        for (const auto& d : shape) {
            const auto dim = require_uint(d, name, "shape");
            if (dim > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
                throw FormatError(fmt::format("tensor '{}': shape dimension too large", name));
            }
            t.shape.push_back(static_cast<std::int64_t>(dim));
        }

        const auto& offsets = entry["data_offsets"];
        if (!offsets.is_array() || offsets.size() != 2) {
            throw FormatError(fmt::format("tensor '{}': data_offsets must be [begin, end]", name));
        }
        const auto begin = require_uint(offsets[0], name, "data_offsets");
        const auto end = require_uint(offsets[1], name, "data_offsets");
        if (begin > end) {
            throw FormatError(fmt::format("tensor '{}': data_offsets begin {} > end {}", name, begin, end));
        }
        if (end > region.size()) {
            throw FormatError(fmt::format("tensor '{}': out-of-bounds offsets [{}, {}) in a {}-byte data region",
                                          name, begin, end, region.size()));
        }
        if (end - begin != t.expected_bytes()) {
            throw FormatError(fmt::format("tensor '{}': {} payload bytes do not match {} {} ({} bytes)", name,
                                          end - begin, dtype_name(t.dtype), shape_to_string(t.shape),
                                          t.expected_bytes()));
        }
        const auto* first = region.data() + begin;
        t.data.assign(first, first + (end - begin));
        extents.push_back({begin, end, name});
        ckpt.tensors.emplace(name, std::move(t));
    }

    std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::uint64_t cursor = 0;
    for (const auto& ex : extents) {
        if (ex.begin < cursor) {
            throw FormatError(fmt::format("tensor '{}': overlapping data offsets", ex.name));
        }
        if (ex.begin > cursor) {
            throw FormatError(fmt::format("gap of {} bytes before tensor '{}'", ex.begin - cursor, ex.name));
        }
        cursor = ex.end;
    }
    if (cursor != region.size()) {
        throw FormatError(fmt::format("{} trailing bytes after the last tensor", region.size() - cursor));
    }
    return ckpt;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    Checkpoint ckpt;
    try {
        ckpt = parse_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
    ckpt.source_label = path.string();
    return ckpt;
}

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (name == "__metadata__") {
            throw std::invalid_argument("tensor name '__metadata__' is reserved");
        }
        if (!t.valid()) {
            throw std::invalid_argument(fmt::format("tensor '{}' holds {} bytes, {} {} needs {}", name,
                                                    t.data.size(), dtype_name(t.dtype), shape_to_string(t.shape),
                                                    t.expected_bytes()));
        }
        header[name] = {{"dtype", dtype_name(t.dtype)},
                        {"shape", t.shape},
                        {"data_offsets", {offset, offset + t.data.size()}}};
        offset += t.data.size();
    }
    if (!ckpt.metadata.empty()) {
        header["__metadata__"] = ckpt.metadata;
    }

    std::string text = header.dump();
    // pad with spaces so the data region starts 8-byte aligned
    text.append((8 - text.size() % 8) % 8, ' ');

    std::vector<std::byte> out(8 + text.size() + offset);
    const std::uint64_t n = text.size();
    std::memcpy(out.data(), &n, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    auto* cursor = out.data() + 8 + text.size();
    for (const auto& [name, t] : ckpt.tensors) {
        std::memcpy(cursor, t.data.data(), t.data.size());
        cursor += t.data.size();
    }
    return out;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    write_file_bytes(path, serialize_checkpoint(ckpt));
}

Vocab read_vocab(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    std::vector<std::string> tokens;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        if (nl == std::string_view::npos) {
            tokens.emplace_back(text);
            break;
        }
        tokens.emplace_back(text.substr(0, nl));
        text.remove_prefix(nl + 1);
    }
    try {
        return Vocab(std::move(tokens));
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_vocab(const Vocab& vocab, const std::filesystem::path& path) {
    std::string text;
    for (const auto& tok : vocab.tokens()) {
        if (tok.find('\n') != std::string::npos) {
            throw std::invalid_argument("vocab token contains a line feed");
        }
        text += tok;
        text += '\n';
    }
    write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    }
    const auto size = static_cast<std::size_t>(in.tellg());
    std::vector<std::byte> bytes(size);
    in.seekg(0);
    if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
        throw std::runtime_error(fmt::format("short read on '{}'", path.string()));
    }
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw std::runtime_error(fmt::format("write failed on '{}'", path.string()));
    }
}

}  // namespace vlmerge
