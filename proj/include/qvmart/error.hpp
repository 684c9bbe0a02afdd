#pragma once

#include <stdexcept>
#include <string>

namespace qvmart {

/// Base for every error thrown by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. sigma at t = 1).
class DomainError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (mismatched grids, unbounded rule, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid or incompatible configuration; the CLI maps this to a usage error.
class ConfigError : public Error {
public:
    using Error::Error;
};

inline void require(bool ok, const std::string& what)
{
    if (!ok) throw ContractError(what);
}

}  // namespace qvmart
