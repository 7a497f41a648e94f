// SPDX-License-Identifier: Apache-2.0
//
// Detector backed by an external process. One request line per patch on the
// child's stdin:
//
//   {"patch": 0, "rect": [x, y, w, h], "width": W, "height": H, "channels": C,
//    "pixels": "<base64 of row-major interleaved 8-bit samples>"}
//
// and one response line on its stdout: a JSON array of
// {"class_id": int, "score": number, "bbox": [x_min, y_min, x_max, y_max]}
// in patch pixel coordinates.

#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "soar/slicing.hpp"

namespace soar::cli {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

class ExecDetector final : public slicing::Detector {
 public:
  explicit ExecDetector(const std::filesystem::path& program);
  ~ExecDetector() override;

  std::vector<Detection> detect(const slicing::Patch& patch) override;
  bool concurrent() const override { return false; }

  /// Closes the request stream and waits; throws DetectorError on a non-zero exit.
  void finish();

 private:
  struct Process;
  std::unique_ptr<Process> process_;
  std::size_t next_patch_{0};
};

}  // namespace soar::cli
