#pragma once

#include <chrono>
#include <cstdint>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace serpeval {

// Base for every error raised by the harness. Subclasses map onto CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input rejected by a precondition or invariant check.
class ValidationError : public Error {
public:
    using Error::Error;
};

class NotFoundError : public Error {
public:
    using Error::Error;
};

enum class Intent { informational, navigational, transactional, other };

std::string_view to_string(Intent intent);
std::optional<Intent> parse_intent(std::string_view token);

// Intents admitted to a study; the rest are recorded and excluded.
inline bool is_study_intent(Intent intent) {
    return intent == Intent::informational || intent == Intent::navigational;
}

// Exact non-negative rational. Metrics are reported as fractions so that
// independent recomputation can be compared with zero tolerance.
class Fraction {
public:
    Fraction() = default;
    Fraction(std::int64_t num, std::int64_t den);

    std::int64_t num() const { return num_; }
    std::int64_t den() const { return den_; }
    double value() const { return static_cast<double>(num_) / static_cast<double>(den_); }
    std::string to_string() const;

    Fraction operator+(const Fraction& other) const;
    Fraction operator/(std::int64_t divisor) const;
    bool operator==(const Fraction&) const = default;
    bool operator<(const Fraction& other) const;
    bool operator>(const Fraction& other) const { return other < *this; }

private:
    std::int64_t num_ = 0;
    std::int64_t den_ = 1;
};

// Returns nullopt when den == 0 (an undefined metric, never zero).
std::optional<Fraction> ratio(std::int64_t num, std::int64_t den);

// ---------------------------------------------------------------------------
// Seeded randomness. The standard distributions are implementation-defined,
// so draws go through our own bounded sampler over mt19937_64 to keep
// samples identical across standard libraries.

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

    // Uniform integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    // k distinct indices out of [0, n), returned in ascending order.
    std::vector<std::size_t> choose(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Time. All timestamps go through an injectable clock so that replay runs
// serialize identically.

using Timestamp = std::chrono::system_clock::time_point;

std::string format_timestamp(Timestamp t);
std::optional<Timestamp> parse_timestamp(std::string_view text);

class Clock {
public:
    virtual ~Clock() = default;
    virtual Timestamp now() const = 0;
    virtual void sleep_until(Timestamp t) = 0;
};

class SystemClock final : public Clock {
public:
    Timestamp now() const override;
    void sleep_until(Timestamp t) override;
};

// Test clock: time only moves when advanced, and sleeping advances it.
class ManualClock final : public Clock {
public:
    explicit ManualClock(Timestamp start) : now_(start) {}
    Timestamp now() const override;
    void sleep_until(Timestamp t) override;
    void advance(std::chrono::milliseconds d);
    void set(Timestamp t);

private:
    mutable std::mutex mutex_;
    Timestamp now_;
};

// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes);
std::string random_token(std::size_t bytes);
bool constant_time_equal(std::string_view a, std::string_view b);

bool is_valid_utf8(std::string_view text);

}  // namespace serpeval
