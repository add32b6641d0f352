#pragma once

#include <nlohmann/json.hpp>

#include "mpfc/mpfc.hpp"

// JSON encodings for logging, replay and scenario files. Vectors are plain
// arrays, matrices arrays of rows.

namespace mpfc {

using Json = nlohmann::json;

void to_json(Json& j, const AlipParams& v);
void from_json(const Json& j, AlipParams& v);
void to_json(Json& j, const GaitTiming& v);
void from_json(const Json& j, GaitTiming& v);
void to_json(Json& j, const GaitCommand& v);
void from_json(const Json& j, GaitCommand& v);
void to_json(Json& j, Stance v);
void from_json(const Json& j, Stance& v);
void to_json(Json& j, const Foothold& v);
void from_json(const Json& j, Foothold& v);
void to_json(Json& j, const SegmentationConfig& v);
void from_json(const Json& j, SegmentationConfig& v);
void to_json(Json& j, const MpfcConfig& v);
void from_json(const Json& j, MpfcConfig& v);
void to_json(Json& j, const SolveStats& v);
void from_json(const Json& j, SolveStats& v);
void to_json(Json& j, const MpfcSolution& v);
void from_json(const Json& j, MpfcSolution& v);
void to_json(Json& j, const MpfcProblem& v);
void from_json(const Json& j, MpfcProblem& v);

Json vec_to_json(const VecX& v);
VecX vec_from_json(const Json& j, Eigen::Index expected = -1);
Json mat_to_json(const MatX& m);
MatX mat_from_json(const Json& j);

/// Parses a JSON document, wrapping parse and type errors in ConfigError
/// with the location.
Json parse_json(const std::string& text, const std::string& source = "<string>");
Json read_json_file(const std::string& path);

std::vector<Foothold> read_footholds(const Json& j);

}  // namespace mpfc

namespace nlohmann {

template <int R, int C>
struct adl_serializer<Eigen::Matrix<double, R, C>> {
  static void to_json(json& j, const Eigen::Matrix<double, R, C>& m) {
    if constexpr (C == 1) {
      j = mpfc::vec_to_json(m);
    } else {
      j = mpfc::mat_to_json(m);
    }
  }
  static void from_json(const json& j, Eigen::Matrix<double, R, C>& m) {
    if constexpr (C == 1) {
      m = mpfc::vec_from_json(j, R);
    } else {
      const mpfc::MatX x = mpfc::mat_from_json(j);
      if ((R != Eigen::Dynamic && x.rows() != R) || (C != Eigen::Dynamic && x.cols() != C)) {
        throw mpfc::ConfigError("matrix has the wrong shape");
      }
      m = x;
    }
  }
};

}  // namespace nlohmann
