#pragma once

// Little-endian byte writer/reader shared by the binary formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace qdawg::detail {

class Writer {
  public:
    template <class T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        std::array<std::uint8_t, sizeof(T)> raw;
        std::memcpy(raw.data(), &v, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
        out.insert(out.end(), raw.begin(), raw.end());
    }
    void bytes(std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> out;
};

template <class Err>
class Reader {
  public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    template <class T>
    T get() {
        need(sizeof(T));
        std::array<std::uint8_t, sizeof(T)> raw;
        std::memcpy(raw.data(), in_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
        pos_ += sizeof(T);
        T v;
        std::memcpy(&v, raw.data(), sizeof(T));
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }
    bool done() const { return pos_ == in_.size(); }
    void need(std::size_t n) const {
        if (pos_ + n > in_.size()) throw Err("binary data truncated");
    }

  private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace qdawg::detail
