#pragma once

#include <stdexcept>

namespace taxlink {

// Failure families. Loaders throw ParseError/IntegrityError, dimension and
// hyperparameter misuse throws ConfigError/DimError, diverging optimization
// throws TrainingError. Empty-input preconditions use std::domain_error.
struct ParseError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IntegrityError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DimError : std::runtime_error { using std::runtime_error::runtime_error; };
struct TrainingError : std::runtime_error { using std::runtime_error::runtime_error; };
struct LookupError : std::runtime_error { using std::runtime_error::runtime_error; };
struct SpanError : std::runtime_error { using std::runtime_error::runtime_error; };
struct OracleError : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace taxlink
