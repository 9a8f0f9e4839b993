#ifndef OSCAL_ERRORS_HPP
#define OSCAL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace oscal {

// Base for all toolkit errors so callers can catch one type at the CLI
// boundary and map it to an exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

// Cholesky or other linear-algebra failure that survived jitter escalation.
class NumericalFailure : public Error {
public:
    explicit NumericalFailure(const std::string& msg, double jitter = 0.0)
        : Error(msg), attempted_jitter(jitter) {}
    double attempted_jitter;
};

class InsufficientData : public Error {
public:
    explicit InsufficientData(const std::string& msg) : Error(msg) {}
};

// Batch-simulator protocol violations: row-count mismatch, bad tokens.
class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& msg) : Error(msg) {}
};

class ParseError : public Error {
public:
    ParseError(const std::string& msg, long row = -1) : Error(msg), row(row) {}
    long row;
};

class SimulatorFailure : public Error {
public:
    explicit SimulatorFailure(const std::string& msg) : Error(msg) {}
};

// A field site ended up with fewer than two converged runs.
class SiteStarvation : public Error {
public:
    SiteStarvation(const std::string& msg, long site) : Error(msg), site(site) {}
    long site;
};

// NLS missingness rate above threshold; caller restarts elsewhere.
class MissingnessError : public Error {
public:
    explicit MissingnessError(const std::string& msg) : Error(msg) {}
};

class UpstreamMissing : public Error {
public:
    explicit UpstreamMissing(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace oscal

#endif
