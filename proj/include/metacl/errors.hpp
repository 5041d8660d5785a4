#pragma once
#include <stdexcept>
#include <string>

namespace metacl {

// Base class for all errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape disagreement between op inputs.
struct ShapeError : Error {
    using Error::Error;
};

// Violated operation precondition (non-scalar loss node, out-of-order task, ...).
struct ContractError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required (e.g. NaN gradients).
struct NumericError : Error {
    using Error::Error;
};

// Bad run configuration: unknown keys, invalid values, missing classes.
struct ConfigError : Error {
    using Error::Error;
};

// Problems with dataset contents (insufficient data per class, bad splits).
struct DataError : Error {
    using Error::Error;
};

// Malformed serialized artifacts (checkpoints, dataset containers).
struct FormatError : Error {
    enum class Kind {
        BadMagic,
        BadVersion,
        Truncated,
        LengthMismatch,
        LabelOutOfRange,
        CorruptField,
    };

    FormatError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
    Kind kind;
};

}  // namespace metacl
