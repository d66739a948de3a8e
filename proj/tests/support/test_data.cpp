#include "test_data.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <unistd.h>

namespace testdata {

using namespace vlmerge;

namespace {

DType random_dtype(std::mt19937_64& rng) {
    static constexpr DType kAll[] = {DType::F32, DType::F16, DType::BF16};
    return kAll[rng() % 3];
}

Shape random_shape(std::mt19937_64& rng, std::size_t max_elements) {
    const auto rank = static_cast<int>(rng() % 4);
    Shape s;
    std::size_t n = 1;
    for (int i = 0; i < rank; ++i) {
        const auto room = max_elements / n;
        if (room < 1) break;
        const auto dim = 1 + rng() % std::min<std::size_t>(room, 16);
        s.push_back(static_cast<std::int64_t>(dim));
        n *= dim;
    }
    return s;
}

std::vector<float> rounded(const std::vector<float>& v, const Shape& shape, DType dtype) {
    return Tensor::from_f32(v, shape, dtype).to_f32();
}

}  // namespace

MergeCase random_merge_case(std::mt19937_64& rng, std::size_t max_elements) {
    std::uniform_real_distribution<float> base(-1.0f, 1.0f);
    std::uniform_real_distribution<float> step(-0.2f, 0.2f);
    MergeCase c;
    const auto count = 1 + rng() % 4;
    std::size_t budget = max_elements;
    for (std::size_t t = 0; t < count && budget > 0; ++t) {
        const auto name = fmt::format("model.layers.{}.w{}", rng() % 8, t);
        auto shape = random_shape(rng, budget);
        const auto n = element_count(shape);
        budget -= n;
        const auto dtype = random_dtype(rng);
        std::vector<float> pre(n), lvlm(n), rm(n);
        for (std::size_t i = 0; i < n; ++i) {
            pre[i] = base(rng);
            // some untouched entries, some shared moves, mostly independent
            const auto kind = rng() % 10;
            lvlm[i] = pre[i] + (kind == 0 ? 0.0f : step(rng));
            rm[i] = kind == 1 ? lvlm[i] : pre[i] + (kind == 2 ? 0.0f : step(rng));
        }
        if (n > 3 && rng() % 3 == 0) {
            // equal magnitudes to exercise the trim tie rule
            lvlm[1] = pre[1] + (lvlm[0] - pre[0]);
            lvlm[2] = pre[2] - (lvlm[0] - pre[0]);
        }
        c.pre.emplace(name, FloatTensor{shape, rounded(pre, shape, dtype)});
        c.lvlm.emplace(name, FloatTensor{shape, rounded(lvlm, shape, dtype)});
        c.rm.emplace(name, FloatTensor{shape, rounded(rm, shape, dtype)});
        c.dtypes[name] = dtype;
    }
    return c;
}

Tensor random_tensor(std::mt19937_64& rng, DType dtype, const Shape& shape) {
    Tensor t;
    t.dtype = dtype;
    t.shape = shape;
    t.data.resize(t.expected_bytes());
    for (auto& b : t.data) {
        b = static_cast<std::byte>(rng() & 0xff);
    }
    return t;
}

Checkpoint random_checkpoint(std::mt19937_64& rng, std::size_t tensors, std::size_t max_elements) {
    Checkpoint c;
    while (c.tensors.size() < tensors) {
        const auto name = fmt::format("blk.{}.{}.t{:x}", rng() % 50, rng() % 7, rng() % 0xffff);
        auto shape = random_shape(rng, max_elements);
        if (rng() % 20 == 0) {
            shape = {0, 3};
        }
        c.tensors.emplace(name, random_tensor(rng, random_dtype(rng), shape));
    }
    if (rng() % 2) {
        c.metadata["format"] = "pt";
        c.metadata["note"] = fmt::format("seed {}", rng() % 1000);
    }
    return c;
}

std::vector<std::byte> raw_file(const std::string& header, std::size_t data_bytes) {
    std::vector<std::byte> out(8 + header.size() + data_bytes, std::byte{0});
    std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) {
        out[i] = static_cast<std::byte>((n >> (8 * i)) & 0xff);
    }
    for (std::size_t i = 0; i < header.size(); ++i) {
        out[8 + i] = static_cast<std::byte>(header[i]);
    }
    return out;
}

std::vector<MalformedCase> malformed_corpus() {
    std::vector<MalformedCase> out;
    out.push_back({"truncated length prefix", std::vector<std::byte>(5, std::byte{1}), "file too short for header length"});
    {
        auto f = raw_file("{}", 0);
        f[0] = std::byte{0xff};
        f[1] = std::byte{0x7f};
        out.push_back({"header length past end of file", f, "exceeds file size"});
    }
    out.push_back({"header is not JSON", raw_file("{\"w\": {\"dtype\": ", 0), "malformed header JSON"});
    out.push_back({"header is a JSON array", raw_file("[1, 2, 3]", 0), "header is not a JSON object"});
    out.push_back({"duplicate tensor name",
                   raw_file(R"({"w":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                            R"("w":{"dtype":"F32","shape":[1],"data_offsets":[4,8]}})",
                            8),
                   "duplicate tensor name 'w'"});
    out.push_back({"unknown dtype", raw_file(R"({"w":{"dtype":"I8","shape":[4],"data_offsets":[0,4]}})", 4),
                   "unknown dtype 'I8'"});
    out.push_back({"offsets past the data region",
                   raw_file(R"({"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", 4), "out-of-bounds offsets"});
    out.push_back({"overlapping tensors",
                   raw_file(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                            R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                            12),
                   "overlapping data offsets"});
    out.push_back({"payload size disagrees with shape",
                   raw_file(R"({"w":{"dtype":"F16","shape":[3],"data_offsets":[0,4]}})", 4), "payload bytes do not match"});
    out.push_back({"missing data_offsets", raw_file(R"({"w":{"dtype":"F32","shape":[1]}})", 4),
                   "missing field 'data_offsets'"});
    return out;
}

std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / fmt::format("vlmerge-{}-{}", tag, ::getpid());
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace testdata
