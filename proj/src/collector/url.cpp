#include "serpeval/url.hpp"

#include <algorithm>
#include <cctype>

namespace serpeval::url {

namespace {

bool is_unreserved(unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~';
}

bool is_allowed_raw(unsigned char c) {
    // unreserved + reserved (gen-delims and sub-delims) + '%'
    static constexpr std::string_view reserved = ":/?#[]@!$&'()*+,;=";
    return is_unreserved(c) || reserved.find(static_cast<char>(c)) != std::string_view::npos || c == '%';
}

int hex_value(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

constexpr char kHex[] = "0123456789ABCDEF";

void append_escape(std::string& out, unsigned char c) {
    out.push_back('%');
    out.push_back(kHex[c >> 4]);
    out.push_back(kHex[c & 0xf]);
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

// Canonical percent-encoding for a path, query or fragment component.
std::string canonical_component(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        auto c = static_cast<unsigned char>(s[i]);
        if (c == '%') {
            int hi = i + 2 < s.size() ? hex_value(s[i + 1]) : -1;
            int lo = hi >= 0 ? hex_value(s[i + 2]) : -1;
            if (hi >= 0 && lo >= 0) {
                auto decoded = static_cast<unsigned char>(hi * 16 + lo);
                if (is_unreserved(decoded)) {
                    out.push_back(static_cast<char>(decoded));
                } else {
                    append_escape(out, decoded);
                }
                i += 2;
            } else {
                append_escape(out, '%');
            }
        } else if (is_allowed_raw(c)) {
            out.push_back(static_cast<char>(c));
        } else {
            append_escape(out, c);
        }
    }
    return out;
}

}  // namespace

ParsedUrl parse(std::string_view text) {
    ParsedUrl url;
    auto colon = text.find(':');
    if (colon == std::string_view::npos || colon == 0) throw UrlError("url has no scheme: " + std::string(text));
    auto scheme = text.substr(0, colon);
    if (!std::isalpha(static_cast<unsigned char>(scheme.front()))) throw UrlError("bad scheme: " + std::string(text));
    for (unsigned char c : scheme) {
        if (!(std::isalnum(c) || c == '+' || c == '-' || c == '.')) throw UrlError("bad scheme: " + std::string(text));
    }
    url.scheme = std::string(scheme);
    auto rest = text.substr(colon + 1);
    if (!rest.starts_with("//")) throw UrlError("url has no authority: " + std::string(text));
    rest.remove_prefix(2);

    auto authority_end = rest.find_first_of("/?#");
    auto authority = rest.substr(0, authority_end);
    rest = authority_end == std::string_view::npos ? std::string_view{} : rest.substr(authority_end);

    if (auto at = authority.rfind('@'); at != std::string_view::npos) {
        url.userinfo = std::string(authority.substr(0, at));
        authority = authority.substr(at + 1);
    }
    std::string_view host = authority;
    if (!authority.empty() && authority.front() == '[') {
        auto close = authority.find(']');
        if (close == std::string_view::npos) throw UrlError("unterminated IPv6 literal: " + std::string(text));
        host = authority.substr(0, close + 1);
        auto after = authority.substr(close + 1);
        if (!after.empty()) {
            if (after.front() != ':') throw UrlError("bad authority: " + std::string(text));
            url.port = std::string(after.substr(1));
        }
    } else if (auto pc = authority.rfind(':'); pc != std::string_view::npos) {
        host = authority.substr(0, pc);
        url.port = std::string(authority.substr(pc + 1));
    }
    for (unsigned char c : url.port) {
        if (!std::isdigit(c)) throw UrlError("bad port: " + std::string(text));
    }
    if (host.empty()) throw UrlError("url has no host: " + std::string(text));
    for (unsigned char c : host) {
        if (c <= 0x20 || c == 0x7f || c == '<' || c == '>' || c == '"' || c == '\\' || c == '^' || c == '`' ||
            c == '{' || c == '|' || c == '}') {
            throw UrlError("bad host: " + std::string(text));
        }
    }
    url.host = std::string(host);

    if (auto hash = rest.find('#'); hash != std::string_view::npos) {
        url.fragment = std::string(rest.substr(hash + 1));
        rest = rest.substr(0, hash);
    }
    if (auto q = rest.find('?'); q != std::string_view::npos) {
        url.query = std::string(rest.substr(q + 1));
        rest = rest.substr(0, q);
    }
    url.path = std::string(rest);
    return url;
}

std::string normalize(std::string_view text) {
    auto url = parse(text);
    std::string scheme = lower(url.scheme);
    std::string out = scheme + "://";
    if (!url.userinfo.empty()) out += canonical_component(url.userinfo) + "@";
    out += lower(url.host);
    std::string port = url.port;
    while (port.size() > 1 && port.front() == '0') port.erase(port.begin());
    bool default_port = port.empty() || (scheme == "http" && port == "80") || (scheme == "https" && port == "443");
    if (!default_port) out += ":" + port;
    auto path = canonical_component(url.path);
    out += path.empty() ? "/" : path;
    if (url.query) out += "?" + canonical_component(*url.query);
    return out;
}

std::string percent_encode(std::string_view text) {
    std::string out;
    for (unsigned char c : text) {
        if (is_unreserved(c)) {
            out.push_back(static_cast<char>(c));
        } else {
            append_escape(out, c);
        }
    }
    return out;
}

std::optional<std::string> percent_decode(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '%') {
            out.push_back(text[i]);
            continue;
        }
        if (i + 2 >= text.size()) return std::nullopt;
        int hi = hex_value(text[i + 1]);
        int lo = hex_value(text[i + 2]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out.push_back(static_cast<char>(hi * 16 + lo));
        i += 2;
    }
    return out;
}

std::optional<std::string> query_parameter(const ParsedUrl& url, std::string_view name) {
    if (!url.query) return std::nullopt;
    std::string_view rest = *url.query;
    while (!rest.empty()) {
        auto amp = rest.find('&');
        auto pair = rest.substr(0, amp);
        auto eq = pair.find('=');
        auto key = pair.substr(0, eq);
        if (key == name) {
            return std::string(eq == std::string_view::npos ? std::string_view{} : pair.substr(eq + 1));
        }
        if (amp == std::string_view::npos) break;
        rest = rest.substr(amp + 1);
    }
    return std::nullopt;
}

Resolution resolve(std::string_view raw_url, const std::vector<TrackingPattern>& patterns) {
    constexpr int kMaxHops = 5;
    Resolution result{ResolutionStatus::passthrough, std::string(raw_url), {}};
    std::string current(raw_url);
    for (int hop = 0; hop < kMaxHops; ++hop) {
        ParsedUrl parsed;
        try {
            parsed = parse(current);
        } catch (const UrlError&) {
            if (hop == 0) throw;
            return {ResolutionStatus::unresolvable, std::string(raw_url), "target is not a valid url"};
        }
        const TrackingPattern* match = nullptr;
        auto host = lower(parsed.host);
        for (const auto& p : patterns) {
            if (host == lower(p.host) && parsed.path.starts_with(p.path_prefix)) {
                match = &p;
                break;
            }
        }
        if (!match) {
            if (hop > 0) {
                auto scheme = lower(parsed.scheme);
                if (scheme != "http" && scheme != "https") {
                    return {ResolutionStatus::unresolvable, std::string(raw_url), "target scheme not http(s)"};
                }
            }
            result.url = current;
            return result;
        }
        auto value = query_parameter(parsed, match->target_param);
        if (!value || value->empty()) {
            return {ResolutionStatus::unresolvable, std::string(raw_url),
                    "missing target parameter '" + match->target_param + "'"};
        }
        auto decoded = percent_decode(*value);
        if (!decoded || !is_valid_utf8(*decoded)) {
            return {ResolutionStatus::unresolvable, std::string(raw_url), "undecodable target parameter"};
        }
        current = *decoded;
        result.status = ResolutionStatus::resolved;
    }
    return {ResolutionStatus::unresolvable, std::string(raw_url), "too many redirector hops"};
}

}  // namespace serpeval::url
