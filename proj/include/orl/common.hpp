#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace orl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error hierarchy. Validation failures carry the offending location in the
// message so CLI users can act on them.
struct OrlError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : OrlError { using OrlError::OrlError; };
struct MissingColumn : OrlError { using OrlError::OrlError; };
struct NonBinaryTreatment : OrlError { using OrlError::OrlError; };
struct NonFiniteValue : OrlError { using OrlError::OrlError; };
struct EmptySample : OrlError { using OrlError::OrlError; };
struct DimensionMismatch : OrlError { using OrlError::OrlError; };
struct DimensionTooSmall : OrlError { using OrlError::OrlError; };
struct AllZeroWeights : OrlError { using OrlError::OrlError; };
struct NumericalUnderflow : OrlError { using OrlError::OrlError; };
struct NonFiniteLoss : OrlError { using OrlError::OrlError; };
struct SingleArmData : OrlError { using OrlError::OrlError; };
struct OracleUnavailable : OrlError { using OrlError::OrlError; };
struct EmptyGrid : OrlError { using OrlError::OrlError; };
struct LengthMismatch : OrlError { using OrlError::OrlError; };
struct MismatchedQuantity : OrlError { using OrlError::OrlError; };
struct DegenerateSample : OrlError { using OrlError::OrlError; };
struct ConfigError : OrlError { using OrlError::OrlError; };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Probabilities are clamped away from {0,1} so BCE and inverse weights stay
// finite. This is separate from the 0.05 propensity clipping used in weights.
inline constexpr double kProbClamp = 1e-6;

inline double clamp_prob(double p) {
    if (p < kProbClamp) return kProbClamp;
    if (p > 1.0 - kProbClamp) return 1.0 - kProbClamp;
    return p;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw OrlError(msg);
}

}  // namespace orl
