#ifndef DIFFEDIT_ERROR_HPP
#define DIFFEDIT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace diffedit {

enum class ErrorKind {
    invalid_shape,
    range,
    ordering,
    infeasible_plan,
    label,
    guidance,
    contract,
    degenerate,
    numeric,
    config,
    io,
    staleness,
    calibration,
    window,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
    if (!cond) fail(kind, msg);
}

}  // namespace diffedit

#endif  // DIFFEDIT_ERROR_HPP
