#include "serpeval/core.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <ctime>
#include <limits>
#include <thread>

namespace serpeval {

std::string_view to_string(Intent intent) {
    switch (intent) {
        case Intent::informational: return "informational";
        case Intent::navigational: return "navigational";
        case Intent::transactional: return "transactional";
        case Intent::other: return "other";
    }
    return "other";
}

std::optional<Intent> parse_intent(std::string_view token) {
    if (token == "informational") return Intent::informational;
    if (token == "navigational") return Intent::navigational;
    if (token == "transactional") return Intent::transactional;
    if (token == "other") return Intent::other;
    return std::nullopt;
}

namespace {

std::int64_t checked_narrow(__int128 v) {
    if (v > std::numeric_limits<std::int64_t>::max() || v < std::numeric_limits<std::int64_t>::min()) {
        throw Error("fraction overflow");
    }
    return static_cast<std::int64_t>(v);
}

}  // namespace

Fraction::Fraction(std::int64_t num, std::int64_t den) {
    if (den == 0) throw Error("fraction with zero denominator");
    if (den < 0) {
        num = -num;
        den = -den;
    }
    auto g = std::gcd(num < 0 ? -num : num, den);
    if (g == 0) g = 1;
    num_ = num / g;
    den_ = den / g;
}

std::string Fraction::to_string() const {
    return std::to_string(num_) + "/" + std::to_string(den_);
}

Fraction Fraction::operator+(const Fraction& other) const {
    auto g = std::gcd(den_, other.den_);
    __int128 l = static_cast<__int128>(den_ / g) * other.den_;
    __int128 n = static_cast<__int128>(num_) * (l / den_) + static_cast<__int128>(other.num_) * (l / other.den_);
    return Fraction(checked_narrow(n), checked_narrow(l));
}

Fraction Fraction::operator/(std::int64_t divisor) const {
    if (divisor == 0) throw Error("fraction division by zero");
    __int128 d = static_cast<__int128>(den_) * divisor;
    return Fraction(num_, checked_narrow(d));
}

bool Fraction::operator<(const Fraction& other) const {
    return static_cast<__int128>(num_) * other.den_ < static_cast<__int128>(other.num_) * den_;
}

std::optional<Fraction> ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return std::nullopt;
    return Fraction(num, den);
}

// ---------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
    // FNV-1a over the label, folded into the seed with a splitmix64 finalizer.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t z = seed ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t SeededRng::below(std::uint64_t bound) {
    if (bound == 0) throw Error("SeededRng::below with zero bound");
    // Rejection sampling: discard the partial bucket at the top of the range.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % bound;
}

std::vector<std::size_t> SeededRng::choose(std::size_t n, std::size_t k) {
    if (k > n) k = n;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        auto j = i + static_cast<std::size_t>(below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------

std::string format_timestamp(Timestamp t) {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
    std::time_t secs = static_cast<std::time_t>(ms / 1000);
    auto millis = static_cast<int>(ms % 1000);
    if (millis < 0) {
        millis += 1000;
        secs -= 1;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    std::array<char, 64> buf{};
    std::snprintf(buf.data(), buf.size(), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, millis);
    return buf.data();
}

std::optional<Timestamp> parse_timestamp(std::string_view text) {
    int y, mo, d, h, mi, s;
    int ms = 0;
    std::string str(text);
    int consumed = 0;
    if (std::sscanf(str.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &y, &mo, &d, &h, &mi, &s, &consumed) != 6) {
        return std::nullopt;
    }
    std::string_view rest = text.substr(static_cast<std::size_t>(consumed));
    if (!rest.empty() && rest.front() == '.') {
        std::size_t i = 1;
        int digits = 0;
        while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') {
            if (digits < 3) {
                ms = ms * 10 + (rest[i] - '0');
                ++digits;
            }
            ++i;
        }
        while (digits < 3) {
            ms *= 10;
            ++digits;
        }
        rest = rest.substr(i);
    }
    if (rest != "Z") return std::nullopt;
    std::tm tm{};
    tm.tm_year = y - 1900;
    tm.tm_mon = mo - 1;
    tm.tm_mday = d;
    tm.tm_hour = h;
    tm.tm_min = mi;
    tm.tm_sec = s;
    std::time_t secs = timegm(&tm);
    return Timestamp(std::chrono::seconds(secs)) + std::chrono::milliseconds(ms);
}

Timestamp SystemClock::now() const { return std::chrono::system_clock::now(); }

void SystemClock::sleep_until(Timestamp t) { std::this_thread::sleep_until(t); }

Timestamp ManualClock::now() const {
    std::lock_guard lock(mutex_);
    return now_;
}

void ManualClock::sleep_until(Timestamp t) {
    std::lock_guard lock(mutex_);
    if (t > now_) now_ = t;
}

void ManualClock::advance(std::chrono::milliseconds d) {
    std::lock_guard lock(mutex_);
    now_ += d;
}

void ManualClock::set(Timestamp t) {
    std::lock_guard lock(mutex_);
    now_ = t;
}

// ---------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string random_token(std::size_t bytes) {
    std::vector<unsigned char> buf(bytes);
    if (RAND_bytes(buf.data(), static_cast<int>(buf.size())) != 1) throw Error("RAND_bytes failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (auto b : buf) {
        out.push_back(hex[b >> 4]);
        out.push_back(hex[b & 0xf]);
    }
    return out;
}

bool constant_time_equal(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    return CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

bool is_valid_utf8(std::string_view text) {
    std::size_t i = 0;
    while (i < text.size()) {
        auto c = static_cast<unsigned char>(text[i]);
        std::size_t extra;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            extra = 1;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            extra = 2;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            extra = 3;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + extra >= text.size()) return false;
        for (std::size_t k = 1; k <= extra; ++k) {
            auto cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000) || cp > 0x10ffff ||
            (cp >= 0xd800 && cp <= 0xdfff)) {
            return false;
        }
        i += extra + 1;
    }
    return true;
}

}  // namespace serpeval
