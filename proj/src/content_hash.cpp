#include "vlmerge/content_hash.hpp"

#include <array>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace vlmerge {

namespace {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (ctx_ == nullptr || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) {
            EVP_MD_CTX_free(ctx_);
            throw std::runtime_error("sha256: digest init failed");
        }
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx_, data, n) != 1) {
            throw std::runtime_error("sha256: digest update failed");
        }
    }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, md.data(), &len) != 1) {
            throw std::runtime_error("sha256: digest final failed");
        }
        std::string out;
        out.reserve(2 * len);
        for (unsigned int i = 0; i < len; ++i) {
            out += fmt::format("{:02x}", md[i]);
        }
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(std::span<const std::byte> bytes) {
    Sha256 h;
    h.update(bytes.data(), bytes.size());
    return h.hex();
}

std::string sha256_hex(std::string_view text) {
    Sha256 h;
    h.update(text.data(), text.size());
    return h.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    }
    Sha256 h;
    std::array<char, 1 << 16> buf;
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace vlmerge
