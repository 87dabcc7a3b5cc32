#pragma once

#include <stdexcept>
#include <string>

namespace ppasim {

// Root of every error thrown by the library. The CLI maps each subclass to a
// distinct process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ProtocolError : public Error {
public:
    using Error::Error;
};

// CRC mismatch on an otherwise well-formed frame.
class CorruptionError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class TimeoutError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class DisconnectError : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class StartupError : public Error {
public:
    using Error::Error;
};

class TrainingDivergedError : public Error {
public:
    using Error::Error;
};

class ExportError : public Error {
public:
    using Error::Error;
};

}  // namespace ppasim
