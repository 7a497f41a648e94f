// SPDX-License-Identifier: Apache-2.0

#include "soar/dota.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "soar/errors.hpp"
#include "soar/io.hpp"

namespace soar::dota {
namespace {

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

std::optional<double> to_double(std::string_view token) {
  double value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

bool is_metadata(std::string_view line) {
  const auto tokens = split_whitespace(line);
  if (tokens.empty()) return false;
  return tokens[0].starts_with("imagesource") || tokens[0].starts_with("gsd");
}

void append_number(std::string& out, double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  out.append(buffer, ptr);
}

bool has_extension(const std::filesystem::path& p, std::string_view ext) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ext;
}

}  // namespace

std::optional<int> category_id(std::string_view name) {
  const auto it = std::find(kCategories.begin(), kCategories.end(), name);
  if (it == kCategories.end()) return std::nullopt;
  return static_cast<int>(it - kCategories.begin()) + 1;
}

std::string_view category_name(int id) {
  if (id < 1 || id > static_cast<int>(kCategories.size())) {
    throw ContractError("category_name: id " + std::to_string(id) + " out of range");
  }
  return kCategories[id - 1];
}

std::vector<DotaAnnotation> parse_dota(std::string_view text) {
  std::vector<DotaAnnotation> out;
  std::size_t line_no = 0;
  bool in_header = true;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;

    const auto tokens = split_whitespace(line);
    if (tokens.empty()) continue;
    if (in_header && is_metadata(line)) continue;
    in_header = false;

    if (tokens.size() != 10) {
      throw ParseError("expected 10 fields (8 coordinates, category, difficult), got " +
                           std::to_string(tokens.size()),
                       line_no);
    }
    DotaAnnotation ann;
    for (std::size_t i = 0; i < 8; ++i) {
      const auto v = to_double(tokens[i]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError("non-numeric coordinate '" + std::string(tokens[i]) + "'", line_no);
      }
      if (*v < 0) throw ParseError("negative coordinate " + std::string(tokens[i]), line_no);
      ann.vertices[i] = *v;
    }
    ann.category = std::string(tokens[8]);
    if (!category_id(ann.category)) {
      throw ParseError("unknown category '" + ann.category + "'", line_no);
    }
    if (tokens[9] == "0") {
      ann.difficult = 0;
    } else if (tokens[9] == "1") {
      ann.difficult = 1;
    } else {
      throw ParseError("difficult flag must be 0 or 1, got '" + std::string(tokens[9]) + "'",
                       line_no);
    }
    out.push_back(std::move(ann));
  }
  return out;
}

std::string format_dota(std::span<const DotaAnnotation> annotations) {
  std::string out;
  for (const auto& a : annotations) {
    for (double v : a.vertices) {
      append_number(out, v);
      out += ' ';
    }
    out += a.category;
    out += ' ';
    out += std::to_string(a.difficult);
    out += '\n';
  }
  return out;
}

Box obb_to_hbb(const Quad& v) {
  Box b{v[0], v[1], v[0], v[1]};
  for (std::size_t i = 2; i < 8; i += 2) {
    b.x_min = std::min(b.x_min, v[i]);
    b.x_max = std::max(b.x_max, v[i]);
    b.y_min = std::min(b.y_min, v[i + 1]);
    b.y_max = std::max(b.y_max, v[i + 1]);
  }
  if (!(b.x_max > b.x_min) || !(b.y_max > b.y_min)) {
    throw DegenerateBoxError("obb_to_hbb: quadrilateral has zero width or height");
  }
  return b;
}

double polygon_area(const Quad& v) {
  double twice = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t j = (i + 1) % 4;
    twice += v[2 * i] * v[2 * j + 1] - v[2 * j] * v[2 * i + 1];
  }
  return std::abs(twice) / 2.0;
}

nlohmann::ordered_json CocoDataset::to_json() const {
  nlohmann::ordered_json doc;
  auto imgs = nlohmann::ordered_json::array();
  for (const auto& im : images) {
    nlohmann::ordered_json j;
    j["id"] = im.id;
    j["file_name"] = im.file_name;
    j["width"] = im.width;
    j["height"] = im.height;
    imgs.push_back(std::move(j));
  }
  auto anns = nlohmann::ordered_json::array();
  for (const auto& a : annotations) {
    nlohmann::ordered_json j;
    j["id"] = a.id;
    j["image_id"] = a.image_id;
    j["category_id"] = a.category_id;
    j["bbox"] = a.bbox;
    j["area"] = a.area;
    j["iscrowd"] = a.iscrowd;
    j["difficult"] = a.difficult;
    anns.push_back(std::move(j));
  }
  auto cats = nlohmann::ordered_json::array();
  for (const auto& c : categories) {
    nlohmann::ordered_json j;
    j["id"] = c.id;
    j["name"] = c.name;
    cats.push_back(std::move(j));
  }
  doc["images"] = std::move(imgs);
  doc["annotations"] = std::move(anns);
  doc["categories"] = std::move(cats);
  return doc;
}

CocoDataset CocoDataset::from_json(const nlohmann::json& doc) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw SchemaError("coco: " + what);
  };
  require(doc.is_object(), "expected a JSON object");
  for (const char* key : {"images", "annotations", "categories"}) {
    require(doc.contains(key) && doc[key].is_array(), std::string("missing array '") + key + "'");
  }
  CocoDataset ds;
  std::set<std::int64_t> image_ids;
  std::set<int> category_ids;
  for (const auto& j : doc["categories"]) {
    require(j.is_object() && j.contains("id") && j["id"].is_number_integer() &&
                j.contains("name") && j["name"].is_string(),
            "malformed category");
    ds.categories.push_back({j["id"].get<int>(), j["name"].get<std::string>()});
    require(category_ids.insert(ds.categories.back().id).second, "duplicate category id");
  }
  for (const auto& j : doc["images"]) {
    require(j.is_object() && j.contains("id") && j["id"].is_number_integer(), "malformed image");
    CocoImage im;
    im.id = j["id"].get<std::int64_t>();
    im.file_name = j.value("file_name", std::string{});
    im.width = j.value("width", 0);
    im.height = j.value("height", 0);
    require(image_ids.insert(im.id).second, "duplicate image id");
    ds.images.push_back(std::move(im));
  }
  std::set<std::int64_t> ann_ids;
  for (const auto& j : doc["annotations"]) {
    require(j.is_object(), "malformed annotation");
    for (const char* key : {"id", "image_id", "category_id", "bbox"}) {
      require(j.contains(key), std::string("annotation missing '") + key + "'");
    }
    const auto& bbox = j["bbox"];
    require(j["id"].is_number_integer() && j["image_id"].is_number_integer() &&
                j["category_id"].is_number_integer() && bbox.is_array() && bbox.size() == 4 &&
                std::all_of(bbox.begin(), bbox.end(), [](const auto& v) { return v.is_number(); }),
            "annotation has wrong field types");
    CocoAnnotation a;
    a.id = j["id"].get<std::int64_t>();
    a.image_id = j["image_id"].get<std::int64_t>();
    a.category_id = j["category_id"].get<int>();
    for (std::size_t i = 0; i < 4; ++i) a.bbox[i] = bbox[i].get<double>();
    a.area = j.contains("area") && j["area"].is_number() ? j["area"].get<double>()
                                                          : a.bbox[2] * a.bbox[3];
    a.iscrowd = j.value("iscrowd", 0);
    a.difficult = j.value("difficult", 0);
    require(ann_ids.insert(a.id).second, "duplicate annotation id");
    require(image_ids.count(a.image_id) == 1, "annotation references unknown image");
    require(category_ids.count(a.category_id) == 1, "annotation references unknown category");
    require(a.bbox[2] > 0 && a.bbox[3] > 0, "annotation bbox must have positive size");
    ds.annotations.push_back(a);
  }
  return ds;
}

CocoDataset dota_to_coco(std::span<const LabeledImage> images) {
  CocoDataset ds;
  for (std::size_t i = 0; i < kCategories.size(); ++i) {
    ds.categories.push_back({static_cast<int>(i) + 1, std::string(kCategories[i])});
  }
  std::int64_t next_annotation = 1;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    const auto image_id = static_cast<std::int64_t>(i) + 1;
    ds.images.push_back({image_id, img.file_name, img.width, img.height});
    for (std::size_t k = 0; k < img.annotations.size(); ++k) {
      const auto& a = img.annotations[k];
      const auto cat = category_id(a.category);
      if (!cat) throw ConversionError(img.file_name + ": unknown category " + a.category);
      Box hbb;
      try {
        hbb = obb_to_hbb(a.vertices);
      } catch (const DegenerateBoxError& e) {
        throw ConversionError(img.file_name + ": object " + std::to_string(k + 1) + ": " +
                              e.what());
      }
      const double area = polygon_area(a.vertices);
      if (!(area > 0)) {
        throw ConversionError(img.file_name + ": object " + std::to_string(k + 1) +
                              " has zero polygon area");
      }
      CocoAnnotation out;
      out.id = next_annotation++;
      out.image_id = image_id;
      out.category_id = *cat;
      out.bbox = {hbb.x_min, hbb.y_min, hbb.width(), hbb.height()};
      out.area = area;
      out.difficult = a.difficult;
      ds.annotations.push_back(out);
    }
  }
  return ds;
}

CocoDataset convert_directory(const std::filesystem::path& images_dir,
                              const std::filesystem::path& labels_dir,
                              const std::optional<std::vector<std::string>>& stems) {
  namespace fs = std::filesystem;
  for (const auto& dir : {images_dir, labels_dir}) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  }
  std::map<std::string, fs::path> images, labels;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && has_extension(entry.path(), ".png")) {
      images[entry.path().stem().string()] = entry.path();
    }
  }
  for (const auto& entry : fs::directory_iterator(labels_dir)) {
    if (entry.is_regular_file() && has_extension(entry.path(), ".txt")) {
      labels[entry.path().stem().string()] = entry.path();
    }
  }

  std::optional<std::set<std::string>> wanted;
  if (stems) wanted.emplace(stems->begin(), stems->end());
  auto selected = [&](const std::string& stem) { return !wanted || wanted->count(stem) > 0; };

  for (const auto& [stem, path] : labels) {
    if (selected(stem) && images.count(stem) == 0) {
      throw ConversionError("label file " + path.string() + " has no matching image " + stem +
                            ".png");
    }
  }
  if (wanted) {
    for (const auto& stem : *wanted) {
      if (images.count(stem) == 0) throw ConversionError("listed image " + stem + ".png not found");
    }
  }

  std::vector<LabeledImage> entries;
  for (const auto& [stem, path] : images) {
    if (!selected(stem)) continue;
    LabeledImage li;
    li.file_name = path.filename().string();
    std::tie(li.width, li.height) = png_dimensions(path);
    if (const auto it = labels.find(stem); it != labels.end()) {
      try {
        li.annotations = parse_dota(read_file(it->second));
      } catch (const ParseError& e) {
        throw e.with_source(it->second.string());
      }
    }
    entries.push_back(std::move(li));
  }
  return dota_to_coco(entries);
}

Image to_grayscale(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw ContractError("to_grayscale: expected 1 or 3 channels");
  Image gray(image.width, image.height, 1);
  for (std::size_t i = 0, n = gray.pixels.size(); i < n; ++i) {
    const unsigned r = image.pixels[3 * i];
    const unsigned g = image.pixels[3 * i + 1];
    const unsigned b = image.pixels[3 * i + 2];
    // exact round-half-up of the BT.601 weighted sum
    gray.pixels[i] = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
  }
  return gray;
}

}  // namespace soar::dota
