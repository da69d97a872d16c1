#pragma once

#include "serpeval/core.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace serpeval::url {

class UrlError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Components of an absolute hierarchical URL (scheme://authority/path?query#fragment).
struct ParsedUrl {
    std::string scheme;
    std::string userinfo;
    std::string host;
    std::string port;  // empty when absent
    std::string path;
    std::optional<std::string> query;
    std::optional<std::string> fragment;
};

ParsedUrl parse(std::string_view text);

// Lower-case scheme and host, drop default ports and fragment, "/" for an
// empty path, canonical percent-encoding (unreserved characters decoded,
// hex digits upper-cased, stray bytes encoded). Throws UrlError.
std::string normalize(std::string_view text);

std::string percent_encode(std::string_view text);  // encodes everything outside unreserved
std::optional<std::string> percent_decode(std::string_view text);

// Value of the first query parameter with the given name (still encoded).
std::optional<std::string> query_parameter(const ParsedUrl& url, std::string_view name);

// Redirector signature: a host (exact, case-insensitive) plus optional path
// prefix, and the query parameter that carries the target URL.
struct TrackingPattern {
    std::string host;
    std::string path_prefix;
    std::string target_param;
};

enum class ResolutionStatus { passthrough, resolved, unresolvable };

struct Resolution {
    ResolutionStatus status = ResolutionStatus::passthrough;
    std::string url;     // resolved target, or the raw url when unresolvable
    std::string reason;  // set when unresolvable
};

// Follows nested redirectors up to a small hop limit.
Resolution resolve(std::string_view raw_url, const std::vector<TrackingPattern>& patterns);

}  // namespace serpeval::url
