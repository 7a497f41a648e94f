// SPDX-License-Identifier: Apache-2.0

#include "exec_detector.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/transform_width.hpp>
#include <boost/process.hpp>
#include <nlohmann/json.hpp>

#include "soar/errors.hpp"

namespace soar::cli {

namespace bp = boost::process;

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<const std::uint8_t*, 6, 8>>;
  std::string out(It(bytes.data()), It(bytes.data() + bytes.size()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

struct ExecDetector::Process {
  bp::pipe requests;
  bp::ipstream responses;
  bp::child child;
  std::string program;

  explicit Process(const std::filesystem::path& path)
      : child(bp::exe = path.string(), bp::std_in < requests, bp::std_out > responses),
        program(path.string()) {}
};

ExecDetector::ExecDetector(const std::filesystem::path& program) {
  if (!std::filesystem::exists(program)) {
    throw DetectorError("detector program not found: " + program.string());
  }
  try {
    process_ = std::make_unique<Process>(program);
  } catch (const bp::process_error& e) {
    throw DetectorError("cannot start detector " + program.string() + ": " + e.what());
  }
}

ExecDetector::~ExecDetector() {
  if (!process_) return;
  std::error_code ec;
  if (process_->child.running(ec)) process_->child.terminate(ec);
}

std::vector<Detection> ExecDetector::detect(const slicing::Patch& patch) {
  if (!process_) throw DetectorError("detector already finished");
  nlohmann::json request = {
      {"patch", next_patch_++},
      {"rect", {patch.rect.x, patch.rect.y, patch.rect.w, patch.rect.h}},
      {"width", patch.image.width},
      {"height", patch.image.height},
      {"channels", patch.image.channels},
      {"pixels", base64_encode(patch.image.pixels)},
  };
  const std::string text = request.dump() + '\n';
  try {
    for (std::size_t done = 0; done < text.size();) {
      done += static_cast<std::size_t>(process_->requests.write(
          text.data() + done, static_cast<int>(text.size() - done)));
    }
  } catch (const bp::process_error& e) {
    throw DetectorError(process_->program + ": cannot write request: " + e.what());
  }

  std::string line;
  if (!std::getline(process_->responses, line)) {
    throw DetectorError(process_->program + ": no response (process exited?)");
  }
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DetectorError(process_->program + ": response is not JSON: " + e.what());
  }
  if (!reply.is_array()) throw DetectorError(process_->program + ": response must be an array");
  std::vector<Detection> out;
  for (const auto& item : reply) {
    if (!item.is_object() || !item.contains("class_id") || !item.contains("score") ||
        !item.contains("bbox") || !item["class_id"].is_number_integer() ||
        !item["score"].is_number() || !item["bbox"].is_array() || item["bbox"].size() != 4) {
      throw DetectorError(process_->program + ": malformed detection " + item.dump());
    }
    const auto& b = item["bbox"];
    for (const auto& v : b) {
      if (!v.is_number()) throw DetectorError(process_->program + ": non-numeric bbox");
    }
    Detection d{item["class_id"].get<int>(), item["score"].get<double>(),
                {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()}};
    if (!d.bbox.valid()) throw DetectorError(process_->program + ": degenerate bbox " + b.dump());
    out.push_back(d);
  }
  return out;
}

void ExecDetector::finish() {
  if (!process_) return;
  auto process = std::move(process_);
  process->requests.close();
  process->child.wait();
  if (const int code = process->child.exit_code(); code != 0) {
    throw DetectorError(process->program + ": exited with status " + std::to_string(code));
  }
}

}  // namespace soar::cli
