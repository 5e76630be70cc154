#pragma once

#include <stdexcept>
#include <string>

namespace tdcdm {

// Base of every error raised by the library. The CLI maps each subclass to an
// exit code (see tools/tdcdm.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

// Zero variance where a spread is required (standardisation, bandwidth, ESS).
class DegenerateError : public Error {
public:
    using Error::Error;
};

class ConstraintDeadlock : public Error {
public:
    using Error::Error;
};

class DiagnosticsError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

// Rethrows the exception being handled with `prefix` prepended to its
// message, keeping its type. Call only inside a catch block.
[[noreturn]] inline void rethrow_with_context(const std::string& prefix) {
    try {
        throw;
    } catch (const DimensionError& e) {
        throw DimensionError(prefix + e.what());
    } catch (const DomainError& e) {
        throw DomainError(prefix + e.what());
    } catch (const CapacityError& e) {
        throw CapacityError(prefix + e.what());
    } catch (const DegenerateError& e) {
        throw DegenerateError(prefix + e.what());
    } catch (const ConstraintDeadlock& e) {
        throw ConstraintDeadlock(prefix + e.what());
    } catch (const DiagnosticsError& e) {
        throw DiagnosticsError(prefix + e.what());
    } catch (const ParseError& e) {
        throw ParseError(prefix + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(prefix + e.what());
    } catch (const DataError& e) {
        throw DataError(prefix + e.what());
    } catch (const Error& e) {
        throw Error(prefix + e.what());
    }
}

}  // namespace tdcdm
