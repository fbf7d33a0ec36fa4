#ifndef GRASPEVO_ERROR_HPP
#define GRASPEVO_ERROR_HPP

#include <stdexcept>
#include <string>

namespace graspevo {

/// Library error carrying a stable machine-readable code ("empty-scene",
/// "lp-failed", ...). what() is the code, optionally followed by ": detail".
class Error : public std::runtime_error {
public:
    explicit Error(std::string code, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? code : code + ": " + detail), _code(std::move(code)) {}

    const std::string& code() const noexcept { return _code; }

private:
    std::string _code;
};

} // namespace graspevo

#endif
