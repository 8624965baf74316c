#pragma once

#include <stdexcept>
#include <string>

namespace tunnelmpc {

/// Near-surface aerodynamic model evaluated inside its singular region.
/// The simulation engine treats this as a collision: the vehicle is in a
/// state the model cannot represent.
class SingularityError : public std::domain_error {
public:
    explicit SingularityError(const std::string& what) : std::domain_error(what) {}
};

/// A barrier function was evaluated at a state past its boundary
/// (inside the standoff / outside the bounding region), where its value
/// is undefined. Callers building constraint sets treat this as
/// infeasible-at-start.
class BarrierViolation : public std::domain_error {
public:
    explicit BarrierViolation(const std::string& what) : std::domain_error(what) {}
};

/// Invalid scenario configuration; message carries the offending key path.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tunnelmpc
