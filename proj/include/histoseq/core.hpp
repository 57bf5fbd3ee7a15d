#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace histoseq {

inline constexpr const char* kToolkitVersion = "0.3.0";
inline constexpr int kDefaultPatchSide = 256;

/// Failure categories. Each maps onto one CLI exit code.
enum class ErrorKind { validation = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct NumericFault : Error {
    explicit NumericFault(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Interleaved 8-bit raster, row-major, `channels` samples per pixel.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> data;

    Image() = default;
    Image(int w, int h, int c = 3, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {
        if (w < 0 || h < 0 || c < 1) throw ValidationError("invalid image extents");
    }

    bool empty() const noexcept { return width == 0 || height == 0; }

    std::size_t index(int row, int col, int ch = 0) const noexcept {
        return (static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col)) *
                   static_cast<std::size_t>(channels) +
               static_cast<std::size_t>(ch);
    }
    std::uint8_t& at(int row, int col, int ch = 0) noexcept { return data[index(row, col, ch)]; }
    std::uint8_t at(int row, int col, int ch = 0) const noexcept { return data[index(row, col, ch)]; }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Reflect an index into [0, n) without repeating the edge sample
/// (n = 5: ... 2 1 | 0 1 2 3 4 | 3 2 ...). Works for any distance outside.
inline int reflect_index(long long i, int n) noexcept {
    if (n <= 1) return 0;
    const long long period = 2LL * (n - 1);
    long long k = i % period;
    if (k < 0) k += period;
    return static_cast<int>(k < n ? k : period - k);
}

}  // namespace histoseq
