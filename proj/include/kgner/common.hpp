#ifndef KGNER_COMMON_HPP
#define KGNER_COMMON_HPP

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace kgner {

// Malformed input data (bad line, bad record, bad annotation).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or inconsistent configuration (definitions, contexts, flags).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor/parameter shapes.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values during training or evaluation.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

uint64_t splitmix64(uint64_t x);

// Deterministic RNG. The mt19937_64 output sequence is fixed by the
// standard; the distribution transforms are hand-rolled here so streams
// are byte-identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform();

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n);

    // Box-Muller normal.
    double normal(double mean = 0.0, double stddev = 1.0);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// FNV-1a 64-bit over raw bytes; used for input digests in run manifests.
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64_file(const std::filesystem::path& path);

// Write-temp-then-rename so partially written outputs are never observed.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// Fixed-precision decimal formatting for tables (deterministic output).
std::string format_double(double v, int precision = 6);

std::string to_lower(std::string s);
std::vector<std::string> split_whitespace(const std::string& s);
std::string join(const std::vector<std::string>& parts, const std::string& sep);

}  // namespace kgner

#endif  // KGNER_COMMON_HPP
