#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "bafdet/detection.hpp"

namespace bafdet {

struct VocObject {
  std::string name;
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
};

struct VocAnnotation {
  std::string filename;
  int width = 0, height = 0;
  std::vector<VocObject> objects;

  std::vector<GroundTruth> ground_truth() const;  // skips unknown class names
};

struct VocParseError : std::runtime_error {
  explicit VocParseError(const std::string& msg, int line)
      : std::runtime_error("voc parse error (line " + std::to_string(line) + "): " + msg),
        line(line) {}
  int line;
};

/// Parses the PASCAL VOC subset used here: filename, size, and objects with
/// name + bndbox. Throws VocParseError with line context on malformed input
/// or inverted boxes.
VocAnnotation parse_voc(const std::string& xml_text);

std::string emit_voc(const VocAnnotation& ann);

VocAnnotation read_voc_file(const std::string& path);

}  // namespace bafdet
