#pragma once

#include <string_view>

namespace vlmerge {

// Full-string match where '*' matches any run of characters (dots included)
// and '?' matches exactly one character.
bool glob_match(std::string_view pattern, std::string_view text);

}  // namespace vlmerge
