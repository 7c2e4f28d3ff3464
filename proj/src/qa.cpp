#include "vla/qa.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <optional>

#include <json.hpp>

#include "vla/rng.hpp"

namespace vla::qa {

namespace {

std::string itos(int v) { return std::to_string(v); }

std::string pair_list_json(const std::string& key,
                           const std::vector<std::pair<int, int>>& pts) {
  std::string s = "{\"" + key + "\":[";
  for (size_t i = 0; i < pts.size(); ++i) {
    if (i) s += ",";
    s += "[" + itos(pts[i].first) + "," + itos(pts[i].second) + "]";
  }
  return s + "]}";
}

std::string pair_list_xml(const std::string& elem,
                          const std::vector<std::pair<int, int>>& pts) {
  std::string s = "<answer>";
  for (const auto& [x, y] : pts)
    s += "<" + elem + " x=\"" + itos(x) + "\" y=\"" + itos(y) + "\"/>";
  return s + "</answer>";
}

void validate_box(const PixBox& b) {
  if (b.x1 >= b.x2) throw MalformedPayloadError("box violates x1 < x2");
  if (b.y1 >= b.y2) throw MalformedPayloadError("box violates y1 < y2");
}

void validate_points(const std::vector<std::pair<int, int>>& pts) {
  if (pts.empty()) throw MalformedPayloadError("point answer has no points");
  if (pts.size() > kMaxPoints)
    throw MalformedPayloadError("point answer exceeds " + itos(kMaxPoints) + " points");
}

void validate_traj(const std::vector<std::pair<int, int>>& pts) {
  if (pts.size() < 2) throw MalformedPayloadError("trajectory needs at least 2 waypoints");
  for (size_t i = 1; i < pts.size(); ++i)
    if (pts[i] == pts[i - 1])
      throw MalformedPayloadError("trajectory has equal consecutive waypoints");
}

// Finds the balanced {...} substring starting at `pos` (respecting strings).
bool balanced_json_span(const std::string& text, size_t pos, size_t* end) {
  int depth = 0;
  bool in_str = false;
  for (size_t i = pos; i < text.size(); ++i) {
    const char c = text[i];
    if (in_str) {
      if (c == '\\') ++i;
      else if (c == '"') in_str = false;
      continue;
    }
    if (c == '"') in_str = true;
    else if (c == '{') ++depth;
    else if (c == '}') {
      if (--depth == 0) {
        *end = i + 1;
        return true;
      }
    }
  }
  return false;
}

const char* json_key(QaType t) {
  switch (t) {
    case QaType::Box: return "boxes";
    case QaType::Point: return "points";
    case QaType::Trajectory: return "trajectory";
    case QaType::General: return nullptr;
  }
  return nullptr;
}

std::optional<Answer> try_parse_json(const std::string& text, size_t pos, QaType t,
                                     std::string* why) {
  size_t end = 0;
  if (!balanced_json_span(text, pos, &end)) return std::nullopt;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.substr(pos, end - pos));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  const char* key = json_key(t);
  if (!key || !j.is_object() || !j.contains(key) || !j[key].is_array()) return std::nullopt;

  auto read_pair_rows = [&](size_t arity) -> std::optional<std::vector<std::vector<int>>> {
    std::vector<std::vector<int>> rows;
    for (const auto& row : j[key]) {
      if (!row.is_array() || row.size() != arity) {
        *why = "payload rows must hold " + itos(static_cast<int>(arity)) + " coordinates";
        return std::nullopt;
      }
      std::vector<int> r;
      for (const auto& v : row) {
        if (!v.is_number_integer()) {
          *why = "coordinates must be integers";
          return std::nullopt;
        }
        r.push_back(v.get<int>());
      }
      rows.push_back(std::move(r));
    }
    return rows;
  };

  if (t == QaType::Box) {
    auto rows = read_pair_rows(4);
    if (!rows || rows->empty()) {
      if (why->empty()) *why = "boxes array is empty";
      return std::nullopt;
    }
    const auto& r = rows->front();
    BoxAnswer a{{r[0], r[1], r[2], r[3]}};
    validate_box(a.box);
    return Answer{a};
  }
  auto rows = read_pair_rows(2);
  if (!rows || rows->empty()) {
    if (why->empty()) *why = "coordinate array is empty";
    return std::nullopt;
  }
  std::vector<std::pair<int, int>> pts;
  for (const auto& r : *rows) pts.emplace_back(r[0], r[1]);
  if (t == QaType::Point) {
    validate_points(pts);
    return Answer{PointAnswer{pts}};
  }
  validate_traj(pts);
  return Answer{TrajAnswer{pts}};
}

// Minimal scanner for the <answer><elem a="1" .../>...</answer> schema.
std::optional<Answer> try_parse_xml(const std::string& text, size_t pos, QaType t,
                                    std::string* why) {
  static const std::string open = "<answer>";
  static const std::string close = "</answer>";
  if (text.compare(pos, open.size(), open) != 0) return std::nullopt;
  const size_t end = text.find(close, pos);
  if (end == std::string::npos) return std::nullopt;
  std::string body = text.substr(pos + open.size(), end - pos - open.size());

  struct Elem {
    std::string name;
    std::vector<std::pair<std::string, int>> attrs;
  };
  std::vector<Elem> elems;
  size_t i = 0;
  while (i < body.size()) {
    while (i < body.size() && std::isspace(static_cast<unsigned char>(body[i]))) ++i;
    if (i >= body.size()) break;
    if (body[i] != '<') return std::nullopt;
    const size_t gt = body.find("/>", i);
    if (gt == std::string::npos) return std::nullopt;
    std::string tag = body.substr(i + 1, gt - i - 1);
    Elem e;
    size_t k = 0;
    while (k < tag.size() && !std::isspace(static_cast<unsigned char>(tag[k]))) ++k;
    e.name = tag.substr(0, k);
    while (k < tag.size()) {
      while (k < tag.size() && std::isspace(static_cast<unsigned char>(tag[k]))) ++k;
      if (k >= tag.size()) break;
      const size_t eq = tag.find('=', k);
      if (eq == std::string::npos) return std::nullopt;
      const std::string name = tag.substr(k, eq - k);
      if (eq + 1 >= tag.size() || tag[eq + 1] != '"') return std::nullopt;
      const size_t q2 = tag.find('"', eq + 2);
      if (q2 == std::string::npos) return std::nullopt;
      const std::string val = tag.substr(eq + 2, q2 - eq - 2);
      char* endp = nullptr;
      const long v = std::strtol(val.c_str(), &endp, 10);
      if (endp == val.c_str() || *endp != '\0') {
        *why = "attribute " + name + " is not an integer";
        return std::nullopt;
      }
      e.attrs.emplace_back(name, static_cast<int>(v));
      k = q2 + 1;
    }
    elems.push_back(std::move(e));
    i = gt + 2;
  }
  if (elems.empty()) {
    *why = "answer element is empty";
    return std::nullopt;
  }

  auto attr = [&](const Elem& e, const std::string& name, int* out) {
    for (const auto& [n, v] : e.attrs)
      if (n == name) {
        *out = v;
        return true;
      }
    return false;
  };

  if (t == QaType::Box) {
    const Elem& e = elems.front();
    if (e.name != "box") return std::nullopt;
    BoxAnswer a;
    if (!attr(e, "x1", &a.box.x1) || !attr(e, "y1", &a.box.y1) ||
        !attr(e, "x2", &a.box.x2) || !attr(e, "y2", &a.box.y2)) {
      *why = "box element missing a coordinate attribute";
      return std::nullopt;
    }
    validate_box(a.box);
    return Answer{a};
  }

  const std::string want = t == QaType::Point ? "point" : "waypoint";
  std::vector<std::pair<int, int>> pts;
  for (const auto& e : elems) {
    if (e.name != want) return std::nullopt;
    int x = 0, y = 0;
    if (!attr(e, "x", &x) || !attr(e, "y", &y)) {
      *why = want + " element missing x or y";
      return std::nullopt;
    }
    pts.emplace_back(x, y);
  }
  if (t == QaType::Point) {
    validate_points(pts);
    return Answer{PointAnswer{pts}};
  }
  validate_traj(pts);
  return Answer{TrajAnswer{pts}};
}

std::string entity_description(const sim::SceneState& st, const std::string& id, Rng& rng) {
  if (const auto* o = st.find_object(id)) {
    return rng.uniform() < 0.5 ? o->color + " " + sim::shape_name(o->shape) : o->category;
  }
  if (const auto* c = st.find_container(id)) return c->color + " " + c->category;
  if (const auto* b = st.find_button(id)) return b->color + " button";
  throw UnknownEntityError("unknown entity: " + id);
}

}  // namespace

std::string qa_type_name(QaType t) {
  switch (t) {
    case QaType::General: return "general";
    case QaType::Box: return "box";
    case QaType::Point: return "point";
    case QaType::Trajectory: return "trajectory";
  }
  return "general";
}

QaType qa_type_from_name(const std::string& name) {
  if (name == "box") return QaType::Box;
  if (name == "point") return QaType::Point;
  if (name == "trajectory") return QaType::Trajectory;
  return QaType::General;
}

std::string serialize(const Answer& answer, Format format) {
  if (const auto* t = std::get_if<TextAnswer>(&answer)) return t->text;

  if (const auto* b = std::get_if<BoxAnswer>(&answer)) {
    validate_box(b->box);
    if (format == Format::Json) {
      return "{\"boxes\":[[" + itos(b->box.x1) + "," + itos(b->box.y1) + "," +
             itos(b->box.x2) + "," + itos(b->box.y2) + "]]}";
    }
    return "<answer><box x1=\"" + itos(b->box.x1) + "\" y1=\"" + itos(b->box.y1) +
           "\" x2=\"" + itos(b->box.x2) + "\" y2=\"" + itos(b->box.y2) + "\"/></answer>";
  }
  if (const auto* p = std::get_if<PointAnswer>(&answer)) {
    validate_points(p->points);
    return format == Format::Json ? pair_list_json("points", p->points)
                                  : pair_list_xml("point", p->points);
  }
  const auto& tr = std::get<TrajAnswer>(answer);
  validate_traj(tr.waypoints);
  return format == Format::Json ? pair_list_json("trajectory", tr.waypoints)
                                : pair_list_xml("waypoint", tr.waypoints);
}

Answer parse(const std::string& text, QaType qa_type) {
  if (qa_type == QaType::General) return TextAnswer{text};
  std::string why;
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '{') {
      if (auto a = try_parse_json(text, i, qa_type, &why)) return *a;
    } else if (text[i] == '<') {
      if (auto a = try_parse_xml(text, i, qa_type, &why)) return *a;
    }
  }
  throw MalformedPayloadError(why.empty() ? "no well-formed payload found" : why);
}

bool filter_record(const QARecord& record) {
  if (record.width > kMaxImageDim || record.height > kMaxImageDim) return false;
  if (const auto* p = std::get_if<PointAnswer>(&record.answer)) {
    if (p->points.empty() || p->points.size() > kMaxPoints) return false;
  }
  return true;
}

std::vector<uint8_t> visible_mask(const sim::SceneState& state, const std::string& entity_id) {
  std::vector<uint8_t> mask = sim::entity_mask(state, entity_id);

  // Entities drawn after this one can cover it: containers < buttons <
  // objects < gripper, ascending id within each class.
  auto subtract = [&](const std::vector<uint8_t>& above) {
    for (size_t i = 0; i < mask.size(); ++i)
      if (above[i]) mask[i] = 0;
  };

  const bool is_container = state.find_container(entity_id) != nullptr;
  const bool is_button = state.find_button(entity_id) != nullptr;
  const bool is_object = state.find_object(entity_id) != nullptr;

  if (is_container) {
    for (const auto& c : state.containers)
      if (c.id > entity_id) subtract(sim::entity_mask(state, c.id));
  }
  if (is_container || is_button) {
    for (const auto& b : state.buttons)
      if (!is_button || b.id > entity_id) subtract(sim::entity_mask(state, b.id));
  }
  if (entity_id != "gripper") {
    for (const auto& o : state.objects)
      if (!is_object || o.id > entity_id) subtract(sim::entity_mask(state, o.id));
    subtract(sim::entity_mask(state, "gripper"));
  }
  return mask;
}

QARecord emit_box_qa(const EmitContext& ctx, const std::string& entity_id, uint64_t rng_seed) {
  Rng rng(derive_seed(rng_seed, 0xb0c5));
  if (!ctx.state.has_entity(entity_id)) throw UnknownEntityError("unknown entity: " + entity_id);

  const auto vis = visible_mask(ctx.state, entity_id);
  if (std::find(vis.begin(), vis.end(), uint8_t{1}) == vis.end())
    throw OccludedEntityError("entity " + entity_id + " not visible");

  QARecord rec;
  rec.qa_type = QaType::Box;
  rec.split_tag = ctx.split;
  rec.scene = ctx.state;
  rec.appearance_seed = ctx.appearance_seed;
  rec.format = rng.uniform() < 0.5 ? Format::Json : Format::Xml;

  const std::string desc = entity_description(ctx.state, entity_id, rng);
  static const std::vector<std::string> tpls = {"locate the {d}", "where is the {d}",
                                                "find the {d}"};
  std::string q = tpls[rng.uniform_int(tpls.size())];
  q.replace(q.find("{d}"), 3, desc);
  if (rng.uniform() < kSpatialPromptProb) q += std::string(" ") + kSpatialCue;
  rec.question = q;

  rec.answer = BoxAnswer{sim::project_box(ctx.state, entity_id)};
  rec.answer_text = serialize(rec.answer, rec.format);
  return rec;
}

QARecord emit_point_qa(const EmitContext& ctx, PointQuery kind, const std::string& entity_id,
                       uint64_t rng_seed, int max_points) {
  if (max_points < 1 || max_points > kMaxPoints) max_points = kMaxPoints;
  Rng rng(derive_seed(rng_seed, 0x9015));
  QARecord rec;
  rec.qa_type = QaType::Point;
  rec.split_tag = ctx.split;
  rec.scene = ctx.state;
  rec.appearance_seed = ctx.appearance_seed;
  rec.format = rng.uniform() < 0.5 ? Format::Json : Format::Xml;

  if (kind == PointQuery::ObjectReference) {
    const auto* target = ctx.state.find_object(entity_id);
    if (!target) throw UnknownEntityError("unknown entity: " + entity_id);
    const bool by_attr = rng.uniform() < 0.5;
    const std::string desc =
        by_attr ? target->color + " " + sim::shape_name(target->shape) : target->category;
    std::vector<std::pair<int, int>> pts;
    for (const auto& o : ctx.state.objects) {
      const bool match = by_attr ? (o.color == target->color && o.shape == target->shape)
                                 : o.category == target->category;
      if (!match) continue;
      const Vec2 px = sim::to_pixel(ctx.state, o.x, o.y);
      pts.emplace_back(static_cast<int>(px.x), static_cast<int>(px.y));
      if (pts.size() == kMaxPoints) break;
    }
    rec.question = "point to the " + desc;
    rec.answer = PointAnswer{pts};
  } else {
    const int w = sim::kImageSize, h = sim::kImageSize;
    const int cell = w / kOccupancyGrid;
    std::vector<uint8_t> occupied(static_cast<size_t>(w) * h, 0);
    auto mark = [&](const std::string& id) {
      const auto m = sim::entity_mask(ctx.state, id);
      for (size_t i = 0; i < occupied.size(); ++i) occupied[i] |= m[i];
    };
    for (const auto& o : ctx.state.objects) mark(o.id);
    for (const auto& c : ctx.state.containers) mark(c.id);
    for (const auto& b : ctx.state.buttons) mark(b.id);

    std::vector<std::pair<int, int>> free_cells;
    rec.gt_mask.assign(static_cast<size_t>(w) * h, 0);
    for (int cy = 0; cy < kOccupancyGrid; ++cy) {
      for (int cx = 0; cx < kOccupancyGrid; ++cx) {
        bool free = true;
        for (int y = cy * cell; y < (cy + 1) * cell && free; ++y)
          for (int x = cx * cell; x < (cx + 1) * cell && free; ++x)
            if (occupied[y * w + x]) free = false;
        if (free) {
          free_cells.emplace_back(cx, cy);
          for (int y = cy * cell; y < (cy + 1) * cell; ++y)
            for (int x = cx * cell; x < (cx + 1) * cell; ++x) rec.gt_mask[y * w + x] = 1;
        }
      }
    }
    if (free_cells.empty()) throw NoFreeSpaceError("no unoccupied occupancy cell");

    rng.shuffle(free_cells);
    std::vector<std::pair<int, int>> pts;
    for (size_t i = 0; i < free_cells.size() && pts.size() < static_cast<size_t>(max_points); ++i)
      pts.emplace_back(free_cells[i].first * cell + cell / 2,
                       free_cells[i].second * cell + cell / 2);
    std::sort(pts.begin(), pts.end());
    rec.question = "point to free space where an object could be placed";
    rec.answer = PointAnswer{pts};
  }
  rec.answer_text = serialize(rec.answer, rec.format);
  return rec;
}

QARecord emit_traj_qa(const task::Trajectory& traj, int subtask_index, int stride,
                      task::Split split, uint64_t rng_seed) {
  if (stride < 1) stride = 1;
  Rng rng(derive_seed(rng_seed, 0x7ea7));
  std::vector<std::pair<int, int>> px;
  const sim::SceneState* first_state = nullptr;
  for (const auto& st : traj.steps) {
    if (st.subtask_index != subtask_index || st.is_padding) continue;
    if (!first_state) first_state = &st.state;
    const Vec2 p = sim::to_pixel(st.state, st.state.robot.x, st.state.robot.y);
    px.emplace_back(static_cast<int>(p.x), static_cast<int>(p.y));
  }
  if (px.size() < 2) throw TooShortSegmentError("subtask segment shorter than 2 steps");

  std::vector<std::pair<int, int>> wps;
  for (size_t i = 0; i < px.size(); i += stride) wps.push_back(px[i]);
  if (wps.back() != px.back()) wps.push_back(px.back());

  // collapse pixel-level duplicates from subsampling
  std::vector<std::pair<int, int>> dedup;
  for (const auto& p : wps)
    if (dedup.empty() || dedup.back() != p) dedup.push_back(p);
  if (dedup.size() < 2) throw TooShortSegmentError("waypoints collapse to a single pixel");

  QARecord rec;
  rec.qa_type = QaType::Trajectory;
  rec.split_tag = split;
  rec.scene = *first_state;
  rec.appearance_seed = traj.appearance_seed;
  rec.format = rng.uniform() < 0.5 ? Format::Json : Format::Xml;
  rec.question = "trace the gripper path to complete the current step";
  rec.answer = TrajAnswer{dedup};
  rec.answer_text = serialize(rec.answer, rec.format);
  return rec;
}

QARecord emit_general_qa(const EmitContext& ctx, uint64_t rng_seed) {
  Rng rng(derive_seed(rng_seed, 0x6e4a));
  QARecord rec;
  rec.qa_type = QaType::General;
  rec.split_tag = ctx.split;
  rec.scene = ctx.state;
  rec.appearance_seed = ctx.appearance_seed;
  rec.format = Format::Json;  // general answers are plain text

  const double draw = rng.uniform();
  if (!ctx.state.objects.empty() && draw < 0.35) {
    std::string answer;
    for (const auto& o : ctx.state.objects) {
      if (!answer.empty()) answer += ", ";
      answer += o.color + " " + o.category;
    }
    rec.question = "list the objects on the table";
    rec.answer = TextAnswer{answer};
  } else if (!ctx.state.objects.empty() && draw < 0.7) {
    // positional caption: centroid pixels per object
    std::string answer;
    for (const auto& o : ctx.state.objects) {
      const Vec2 px = sim::to_pixel(ctx.state, o.x, o.y);
      if (!answer.empty()) answer += ", ";
      answer += o.color + " " + o.category + " at " +
                std::to_string(static_cast<int>(px.x)) + "," +
                std::to_string(static_cast<int>(px.y));
    }
    rec.question = "list the objects and where they are";
    rec.answer = TextAnswer{answer};
  } else {
    const int a = rng.uniform_int(1, 9), b = rng.uniform_int(1, 9);
    const char ops[3] = {'+', '-', 'x'};
    const char op = ops[rng.uniform_int(3)];
    const int v = op == '+' ? a + b : op == '-' ? a - b : a * b;
    rec.question = "what is " + std::to_string(a) + op + std::to_string(b) + "?";
    rec.answer = TextAnswer{std::to_string(v)};
  }
  rec.answer_text = std::get<TextAnswer>(rec.answer).text;
  return rec;
}

}  // namespace vla::qa
