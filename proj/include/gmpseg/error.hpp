#pragma once

#include <stdexcept>
#include <string>

namespace gmpseg {

enum class errc {
  bad_magic,
  truncated_data,
  non_positive_dim,
  non_positive_spacing,
  unknown_dtype,
  value_out_of_range,
  degenerate_range,
  degenerate_input,
  empty_volume,
  flat_profile,
  center_out_of_range,
  non_positive_lambda,
  no_valid_path,
  crossing_paths,
  dim_mismatch,
  shape_mismatch,
  depth_too_small,
  depth_not_one,
  odd_spatial_dim,
  no_positive_samples,
  too_few_distinct_values,
  no_annotated_slices,
  missing_checkpoint,
  too_small,
  placement_failure,
};

inline const char* errc_name(errc c) {
  switch (c) {
    case errc::bad_magic: return "BadMagic";
    case errc::truncated_data: return "TruncatedData";
    case errc::non_positive_dim: return "NonPositiveDim";
    case errc::non_positive_spacing: return "NonPositiveSpacing";
    case errc::unknown_dtype: return "UnknownDtype";
    case errc::value_out_of_range: return "ValueOutOfRange";
    case errc::degenerate_range: return "DegenerateRange";
    case errc::degenerate_input: return "DegenerateInput";
    case errc::empty_volume: return "EmptyVolume";
    case errc::flat_profile: return "FlatProfile";
    case errc::center_out_of_range: return "CenterOutOfRange";
    case errc::non_positive_lambda: return "NonPositiveLambda";
    case errc::no_valid_path: return "NoValidPath";
    case errc::crossing_paths: return "CrossingPaths";
    case errc::dim_mismatch: return "DimMismatch";
    case errc::shape_mismatch: return "ShapeMismatch";
    case errc::depth_too_small: return "DepthTooSmall";
    case errc::depth_not_one: return "DepthNotOne";
    case errc::odd_spatial_dim: return "OddSpatialDim";
    case errc::no_positive_samples: return "NoPositiveSamples";
    case errc::too_few_distinct_values: return "TooFewDistinctValues";
    case errc::no_annotated_slices: return "NoAnnotatedSlices";
    case errc::missing_checkpoint: return "MissingCheckpoint";
    case errc::too_small: return "TooSmall";
    case errc::placement_failure: return "PlacementFailure";
  }
  return "Unknown";
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  errc code() const { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw error(code, what); }

inline void require(bool ok, errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace gmpseg
