#pragma once

#include <array>

// Severity tables for the synthetic corruption set. Changing any value requires bumping
// kCorruptionConstantsVersion: exported datasets record it in their sidecar.

namespace gtta::constants {

inline constexpr int kCorruptionConstantsVersion = 1;

/// Additive Gaussian noise standard deviation.
inline constexpr std::array<double, 5> kNoiseSigma{0.04, 0.08, 0.12, 0.18, 0.26};

/// Gaussian blur kernel standard deviation, in pixels.
inline constexpr std::array<double, 5> kBlurSigma{0.5, 0.75, 1.0, 1.25, 1.5};

/// Contrast factor c in x' = (x - mean) * c + mean.
inline constexpr std::array<double, 5> kContrastFactor{0.6, 0.45, 0.3, 0.2, 0.1};

/// Additive brightness shift.
inline constexpr std::array<double, 5> kBrightnessShift{0.1, 0.2, 0.3, 0.4, 0.5};

/// Pixelation: images are block-averaged down to round(side * factor) cells per axis.
inline constexpr std::array<double, 5> kPixelateFactor{0.75, 0.6, 0.5, 0.4, 0.3};

}  // namespace gtta::constants
