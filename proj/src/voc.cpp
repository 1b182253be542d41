#include "bafdet/voc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace bafdet {

std::vector<GroundTruth> VocAnnotation::ground_truth() const {
  std::vector<GroundTruth> out;
  for (const auto& o : objects) {
    const int k = class_id_from_name(o.name);
    if (k < 0) continue;
    out.push_back({BBox::from_corners(o.xmin, o.ymin, o.xmax, o.ymax), k});
  }
  return out;
}

namespace {

int line_of(const std::string& text, std::size_t pos) {
  return 1 + static_cast<int>(std::count(text.begin(),
                                         text.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(pos, text.size())),
                                         '\n'));
}

// finds <tag>...</tag> at or after `from`; returns content span or npos
struct TagSpan {
  std::size_t content_begin = std::string::npos;
  std::size_t content_end = std::string::npos;
  std::size_t end_of_close = std::string::npos;
  bool found() const { return content_begin != std::string::npos; }
};

TagSpan find_tag(const std::string& text, const std::string& tag, std::size_t from) {
  TagSpan s;
  const std::string open = "<" + tag + ">";
  const std::string close = "</" + tag + ">";
  const std::size_t o = text.find(open, from);
  if (o == std::string::npos) return s;
  const std::size_t c = text.find(close, o + open.size());
  if (c == std::string::npos)
    throw VocParseError("unterminated <" + tag + ">", line_of(text, o));
  s.content_begin = o + open.size();
  s.content_end = c;
  s.end_of_close = c + close.size();
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string required_text(const std::string& text, const std::string& tag,
                          std::size_t from, std::size_t until) {
  TagSpan s = find_tag(text, tag, from);
  if (!s.found() || s.content_begin > until)
    throw VocParseError("missing <" + tag + ">", line_of(text, from));
  return trim(text.substr(s.content_begin, s.content_end - s.content_begin));
}

double required_number(const std::string& text, const std::string& tag,
                       std::size_t from, std::size_t until) {
  const std::string v = required_text(text, tag, from, until);
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw VocParseError("bad number in <" + tag + ">: '" + v + "'", line_of(text, from));
  }
}

}  // namespace

VocAnnotation parse_voc(const std::string& xml_text) {
  VocAnnotation ann;
  TagSpan root = find_tag(xml_text, "annotation", 0);
  if (!root.found()) throw VocParseError("missing <annotation> root", 1);

  TagSpan fn = find_tag(xml_text, "filename", root.content_begin);
  if (fn.found() && fn.content_end <= root.content_end)
    ann.filename = trim(xml_text.substr(fn.content_begin, fn.content_end - fn.content_begin));
  TagSpan size = find_tag(xml_text, "size", root.content_begin);
  if (size.found() && size.content_end <= root.content_end) {
    ann.width = static_cast<int>(
        required_number(xml_text, "width", size.content_begin, size.content_end));
    ann.height = static_cast<int>(
        required_number(xml_text, "height", size.content_begin, size.content_end));
  }

  std::size_t pos = root.content_begin;
  while (true) {
    TagSpan obj = find_tag(xml_text, "object", pos);
    if (!obj.found() || obj.content_begin > root.content_end) break;
    VocObject o;
    o.name = required_text(xml_text, "name", obj.content_begin, obj.content_end);
    TagSpan box = find_tag(xml_text, "bndbox", obj.content_begin);
    if (!box.found() || box.content_begin > obj.content_end)
      throw VocParseError("object without <bndbox>", line_of(xml_text, obj.content_begin));
    o.xmin = required_number(xml_text, "xmin", box.content_begin, box.content_end);
    o.ymin = required_number(xml_text, "ymin", box.content_begin, box.content_end);
    o.xmax = required_number(xml_text, "xmax", box.content_begin, box.content_end);
    o.ymax = required_number(xml_text, "ymax", box.content_begin, box.content_end);
    if (o.xmax <= o.xmin || o.ymax <= o.ymin)
      throw VocParseError("inverted or empty box for object '" + o.name + "'",
                          line_of(xml_text, box.content_begin));
    ann.objects.push_back(std::move(o));
    pos = obj.end_of_close;
  }
  return ann;
}

namespace {

std::string fmt_coord(double v) {
  if (v == std::floor(v) && std::abs(v) < 1e15) {
    std::ostringstream os;
    os << static_cast<long long>(v);
    return os.str();
  }
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string emit_voc(const VocAnnotation& ann) {
  std::ostringstream os;
  os << "<annotation>\n";
  os << "  <filename>" << ann.filename << "</filename>\n";
  os << "  <size>\n    <width>" << ann.width << "</width>\n    <height>" << ann.height
     << "</height>\n    <depth>1</depth>\n  </size>\n";
  for (const auto& o : ann.objects) {
    os << "  <object>\n    <name>" << o.name << "</name>\n"
       << "    <difficult>0</difficult>\n    <bndbox>\n"
       << "      <xmin>" << fmt_coord(o.xmin) << "</xmin>\n"
       << "      <ymin>" << fmt_coord(o.ymin) << "</ymin>\n"
       << "      <xmax>" << fmt_coord(o.xmax) << "</xmax>\n"
       << "      <ymax>" << fmt_coord(o.ymax) << "</ymax>\n"
       << "    </bndbox>\n  </object>\n";
  }
  os << "</annotation>\n";
  return os.str();
}

VocAnnotation read_voc_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_voc(ss.str());
}

}  // namespace bafdet
