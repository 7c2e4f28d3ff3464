#include "vla/sim.hpp"

#include <algorithm>
#include <cmath>

#include "vla/rng.hpp"

namespace vla::sim {

namespace {

constexpr int kLayoutAttempts = 1000;

struct Rgb {
  double r, g, b;
};

Rgb base_color(const std::string& name) {
  if (name == "red") return {220, 55, 48};
  if (name == "green") return {60, 180, 75};
  if (name == "blue") return {50, 95, 220};
  if (name == "yellow") return {230, 210, 55};
  if (name == "purple") return {150, 65, 200};
  if (name == "orange") return {240, 140, 35};
  if (name == "cyan") return {65, 200, 210};
  if (name == "pink") return {240, 125, 180};
  if (name == "brown") return {145, 100, 60};
  if (name == "white") return {235, 235, 235};
  if (name == "gray") return {130, 130, 130};
  return {30, 30, 30};  // unknown -> near-black
}

// Appearance parameters are all derived from the seed; geometry never is.
struct Appearance {
  Rgb background;
  double brightness;
  uint64_t seed;

  Rgb colorize(const std::string& name) const {
    Rng jit(derive_seed(seed, fnv1a(name), 0x70a1));
    const Rgb base = base_color(name);
    auto ch = [&](double v) {
      v = (v + jit.uniform(-18.0, 18.0)) * brightness;
      return std::clamp(v, 0.0, 255.0);
    };
    return {ch(base.r), ch(base.g), ch(base.b)};
  }
};

Appearance make_appearance(uint64_t seed) {
  Rng rng(derive_seed(seed, 0xb6, 0x01));
  static const Rgb kBackgrounds[] = {
      {205, 205, 200}, {190, 200, 210}, {215, 205, 185}, {180, 185, 190},
      {200, 190, 205}, {170, 175, 165}, {220, 215, 210}, {185, 195, 175},
  };
  Appearance app;
  app.seed = seed;
  app.brightness = 0.75 + 0.25 * rng.uniform();
  Rgb bg = kBackgrounds[rng.uniform_int(8)];
  bg.r += rng.uniform(-10.0, 10.0);
  bg.g += rng.uniform(-10.0, 10.0);
  bg.b += rng.uniform(-10.0, 10.0);
  app.background = {std::clamp(bg.r * app.brightness, 0.0, 255.0),
                    std::clamp(bg.g * app.brightness, 0.0, 255.0),
                    std::clamp(bg.b * app.brightness, 0.0, 255.0)};
  return app;
}

double pixel_center(int p, int size, double extent) {
  return (p + 0.5) * extent / size;
}

bool point_in_object(const ObjectSpec& o, double px, double py) {
  const double dx = px - o.x;
  const double dy = py - o.y;
  switch (o.shape) {
    case Shape::Circle:
      return dx * dx + dy * dy <= o.half_extent * o.half_extent;
    case Shape::Square: {
      const double c = std::cos(-o.theta), s = std::sin(-o.theta);
      const double rx = c * dx - s * dy;
      const double ry = s * dx + c * dy;
      return std::abs(rx) <= o.half_extent && std::abs(ry) <= o.half_extent;
    }
    case Shape::Triangle: {
      // Equilateral triangle inscribed in the half-extent circle.
      double vx[3], vy[3];
      for (int k = 0; k < 3; ++k) {
        const double a = o.theta - M_PI / 2.0 + 2.0 * M_PI * k / 3.0;
        vx[k] = o.x + o.half_extent * std::cos(a);
        vy[k] = o.y + o.half_extent * std::sin(a);
      }
      double sign = 0.0;
      for (int k = 0; k < 3; ++k) {
        const int j = (k + 1) % 3;
        const double cross =
            (vx[j] - vx[k]) * (py - vy[k]) - (vy[j] - vy[k]) * (px - vx[k]);
        if (cross != 0.0) {
          if (sign == 0.0) {
            sign = cross;
          } else if (sign * cross < 0.0) {
            return false;
          }
        }
      }
      return true;
    }
  }
  return false;
}

int clamp_px(int p, int size) { return std::clamp(p, 0, size); }

PixBox box_from_extent(const SceneState& st, double cx, double cy, double hx, double hy) {
  const int w = kImageSize, h = kImageSize;
  PixBox b;
  b.x1 = clamp_px(static_cast<int>(std::floor((cx - hx) / st.width * w)), w);
  b.x2 = clamp_px(static_cast<int>(std::ceil((cx + hx) / st.width * w)), w);
  b.y1 = clamp_px(static_cast<int>(std::floor((cy - hy) / st.height * h)), h);
  b.y2 = clamp_px(static_cast<int>(std::ceil((cy + hy) / st.height * h)), h);
  return b;
}

struct EntityGeom {
  std::string id;
  Vec2 pos;
  double radius;  // bounding radius for separation checks
};

std::vector<EntityGeom> all_entities(const SceneState& st) {
  std::vector<EntityGeom> out;
  for (const auto& c : st.containers)
    out.push_back({c.id, {c.x, c.y}, std::max(c.half_w, c.half_h)});
  for (const auto& b : st.buttons) out.push_back({b.id, {b.x, b.y}, b.half_extent});
  for (const auto& o : st.objects) out.push_back({o.id, {o.x, o.y}, o.half_extent});
  return out;
}

void fill_gripper_mask(const SceneState& st, std::vector<uint8_t>& mask) {
  const int w = kImageSize, h = kImageSize;
  const int cx = std::clamp(static_cast<int>(std::floor(st.robot.x / st.width * w)), 0, w - 1);
  const int cy = std::clamp(static_cast<int>(std::floor(st.robot.y / st.height * h)), 0, h - 1);
  for (int k = -2; k <= 2; ++k) {
    if (cx + k >= 0 && cx + k < w) mask[cy * w + cx + k] = 1;
    if (cy + k >= 0 && cy + k < h) mask[(cy + k) * w + cx] = 1;
  }
}

}  // namespace

std::string shape_name(Shape s) {
  switch (s) {
    case Shape::Circle: return "circle";
    case Shape::Square: return "square";
    case Shape::Triangle: return "triangle";
  }
  return "circle";
}

Shape shape_from_name(const std::string& name) {
  if (name == "square") return Shape::Square;
  if (name == "triangle") return Shape::Triangle;
  return Shape::Circle;
}

std::string pred_name(Pred p) {
  switch (p) {
    case Pred::Inside: return "inside";
    case Pred::OnTopOf: return "on-top-of";
    case Pred::Near: return "near";
    case Pred::LeftOf: return "left-of";
    case Pred::RightOf: return "right-of";
    case Pred::InFrontOf: return "in-front-of";
    case Pred::Behind: return "behind";
  }
  return "near";
}

Pred pred_from_name(const std::string& name) {
  if (name == "inside") return Pred::Inside;
  if (name == "on-top-of") return Pred::OnTopOf;
  if (name == "left-of") return Pred::LeftOf;
  if (name == "right-of") return Pred::RightOf;
  if (name == "in-front-of") return Pred::InFrontOf;
  if (name == "behind") return Pred::Behind;
  return Pred::Near;
}

const ObjectSpec* SceneState::find_object(const std::string& id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

ObjectSpec* SceneState::find_object(const std::string& id) {
  for (auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

const ContainerSpec* SceneState::find_container(const std::string& id) const {
  for (const auto& c : containers)
    if (c.id == id) return &c;
  return nullptr;
}

const ButtonSpec* SceneState::find_button(const std::string& id) const {
  for (const auto& b : buttons)
    if (b.id == id) return &b;
  return nullptr;
}

bool SceneState::has_entity(const std::string& id) const {
  return id == "gripper" || find_object(id) || find_container(id) || find_button(id);
}

Vec2 SceneState::centroid(const std::string& id) const {
  if (id == "gripper") return {robot.x, robot.y};
  if (const auto* o = find_object(id)) return {o->x, o->y};
  if (const auto* c = find_container(id)) return {c->x, c->y};
  if (const auto* b = find_button(id)) return {b->x, b->y};
  throw UnknownEntityError("unknown entity: " + id);
}

SceneState init_scene(const LayoutSpec& layout, uint64_t seed) {
  if (layout.width <= 0.0 || layout.height <= 0.0)
    throw InfeasibleLayoutError("workspace dimensions must be positive");

  double footprint = 0.0;
  auto area = [](double r) { return 4.0 * r * r; };
  for (const auto& c : layout.containers) footprint += area(std::max(c.half_w, c.half_h));
  for (const auto& b : layout.buttons) footprint += area(b.half_extent);
  for (const auto& o : layout.objects) footprint += area(o.half_extent);
  if (footprint > layout.width * layout.height)
    throw InfeasibleLayoutError("total entity footprint exceeds workspace");

  Rng rng(derive_seed(seed, 0x5c3e));
  for (int attempt = 0; attempt < kLayoutAttempts; ++attempt) {
    SceneState st;
    st.width = layout.width;
    st.height = layout.height;
    st.robot = RobotState{layout.width / 2.0, layout.height / 2.0, true, ""};

    std::vector<EntityGeom> placed;
    bool ok = true;
    auto place = [&](const std::string& id, double radius, double* x, double* y) {
      for (int t = 0; t < 50; ++t) {
        const double px = rng.uniform(radius, layout.width - radius);
        const double py = rng.uniform(radius, layout.height - radius);
        bool clear = true;
        for (const auto& e : placed) {
          if (dist({px, py}, e.pos) < radius + e.radius) {
            clear = false;
            break;
          }
        }
        if (clear) {
          *x = px;
          *y = py;
          placed.push_back({id, {px, py}, radius});
          return true;
        }
      }
      return false;
    };

    for (const auto& d : layout.containers) {
      ContainerSpec c{d.id, d.category, d.color, 0, 0, d.half_w, d.half_h};
      if (!place(d.id, std::max(d.half_w, d.half_h), &c.x, &c.y)) { ok = false; break; }
      st.containers.push_back(c);
    }
    if (ok) {
      for (const auto& d : layout.buttons) {
        ButtonSpec b{d.id, d.color, 0, 0, d.half_extent, d.label};
        if (!place(d.id, d.half_extent, &b.x, &b.y)) { ok = false; break; }
        st.buttons.push_back(b);
      }
    }
    if (ok) {
      for (const auto& d : layout.objects) {
        ObjectSpec o{d.id, d.category, d.color, d.shape, 0, 0, 0.0, d.half_extent};
        if (!place(d.id, d.half_extent, &o.x, &o.y)) { ok = false; break; }
        st.objects.push_back(o);
      }
    }
    if (ok) return st;
  }
  throw InfeasibleLayoutError("layout sampling exhausted", kLayoutAttempts);
}

SceneState step(const SceneState& state, const Action& action) {
  SceneState st = state;

  double dx = std::isfinite(action.dx) ? action.dx : 0.0;
  double dy = std::isfinite(action.dy) ? action.dy : 0.0;
  const double norm = std::sqrt(dx * dx + dy * dy);
  if (norm > kMaxStep) {
    dx *= kMaxStep / norm;
    dy *= kMaxStep / norm;
  }
  st.robot.x = std::clamp(st.robot.x + dx, 0.0, st.width);
  st.robot.y = std::clamp(st.robot.y + dy, 0.0, st.height);

  // Held object tracks the gripper; dtheta spins it.
  if (!st.robot.held.empty()) {
    if (auto* o = st.find_object(st.robot.held)) {
      o->x = st.robot.x;
      o->y = st.robot.y;
      if (std::isfinite(action.dtheta)) o->theta += action.dtheta;
    }
  }

  if (action.grip > 0.0) {
    if (st.robot.gripper_open && st.robot.held.empty()) {
      const ObjectSpec* best = nullptr;
      double best_d = 0.0;
      for (const auto& o : st.objects) {
        const double d = dist({o.x, o.y}, {st.robot.x, st.robot.y});
        if (d > kGraspRadius) continue;
        if (!best || d < best_d || (d == best_d && o.id < best->id)) {
          best = &o;
          best_d = d;
        }
      }
      if (best) {
        st.robot.held = best->id;
        auto* o = st.find_object(best->id);
        o->x = st.robot.x;
        o->y = st.robot.y;
      }
    }
    st.robot.gripper_open = false;
  } else {
    st.robot.held.clear();
    st.robot.gripper_open = true;
  }
  return st;
}

Observation render(const SceneState& state, uint64_t appearance_seed) {
  const Appearance app = make_appearance(appearance_seed);
  const int w = kImageSize, h = kImageSize;

  Observation obs;
  obs.appearance_seed = appearance_seed;
  obs.pixels.assign(static_cast<size_t>(w) * h * 3, 0);

  auto put = [&](int x, int y, const Rgb& c) {
    const size_t i = (static_cast<size_t>(y) * w + x) * 3;
    obs.pixels[i] = static_cast<uint8_t>(std::lround(c.r));
    obs.pixels[i + 1] = static_cast<uint8_t>(std::lround(c.g));
    obs.pixels[i + 2] = static_cast<uint8_t>(std::lround(c.b));
  };

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) put(x, y, app.background);

  auto paint_box = [&](const PixBox& b, auto inside, const Rgb& color) {
    for (int y = b.y1; y < b.y2; ++y) {
      const double py = pixel_center(y, h, state.height);
      for (int x = b.x1; x < b.x2; ++x) {
        if (inside(pixel_center(x, w, state.width), py)) put(x, y, color);
      }
    }
  };

  // z-order: containers, then buttons, then objects (each by ascending id),
  // gripper marker on top.
  auto sorted_ids = [](auto const& v) {
    std::vector<const typename std::decay_t<decltype(v)>::value_type*> ptrs;
    for (const auto& e : v) ptrs.push_back(&e);
    std::sort(ptrs.begin(), ptrs.end(),
              [](auto* a, auto* b) { return a->id < b->id; });
    return ptrs;
  };

  for (const auto* c : sorted_ids(state.containers)) {
    const Rgb col = app.colorize(c->color);
    const Rgb rim = {col.r * 0.55, col.g * 0.55, col.b * 0.55};
    const PixBox b = box_from_extent(state, c->x, c->y, c->half_w, c->half_h);
    paint_box(b, [&](double px, double py) {
      return std::abs(px - c->x) <= c->half_w && std::abs(py - c->y) <= c->half_h;
    }, col);
    // thin rim so containers read as containers, not blobs
    for (int y = b.y1; y < b.y2; ++y)
      for (int x = b.x1; x < b.x2; ++x)
        if (y == b.y1 || y == b.y2 - 1 || x == b.x1 || x == b.x2 - 1) put(x, y, rim);
  }

  for (const auto* bt : sorted_ids(state.buttons)) {
    const Rgb col = app.colorize(bt->color);
    paint_box(box_from_extent(state, bt->x, bt->y, bt->half_extent, bt->half_extent),
              [&](double px, double py) {
                const double dx = px - bt->x, dy = py - bt->y;
                return dx * dx + dy * dy <= bt->half_extent * bt->half_extent;
              }, col);
  }

  for (const auto* o : sorted_ids(state.objects)) {
    const Rgb col = app.colorize(o->color);
    paint_box(box_from_extent(state, o->x, o->y, o->half_extent, o->half_extent),
              [&](double px, double py) { return point_in_object(*o, px, py); }, col);
  }

  std::vector<uint8_t> gmask(static_cast<size_t>(w) * h, 0);
  fill_gripper_mask(state, gmask);
  const double gb = 255.0 * app.brightness;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (gmask[y * w + x]) put(x, y, {gb, gb, gb});

  return obs;
}

PixBox project_box(const SceneState& state, const std::string& entity_id) {
  if (entity_id == "gripper") {
    const int w = kImageSize, h = kImageSize;
    const int cx = std::clamp(static_cast<int>(std::floor(state.robot.x / state.width * w)), 0, w - 1);
    const int cy = std::clamp(static_cast<int>(std::floor(state.robot.y / state.height * h)), 0, h - 1);
    return {std::max(0, cx - 2), std::max(0, cy - 2), std::min(w, cx + 3), std::min(h, cy + 3)};
  }
  if (const auto* o = state.find_object(entity_id))
    return box_from_extent(state, o->x, o->y, o->half_extent, o->half_extent);
  if (const auto* c = state.find_container(entity_id))
    return box_from_extent(state, c->x, c->y, c->half_w, c->half_h);
  if (const auto* b = state.find_button(entity_id))
    return box_from_extent(state, b->x, b->y, b->half_extent, b->half_extent);
  throw UnknownEntityError("unknown entity: " + entity_id);
}

Vec2 to_pixel(const SceneState& state, double x, double y) {
  return {std::clamp(std::floor(x / state.width * kImageSize), 0.0, kImageSize - 1.0),
          std::clamp(std::floor(y / state.height * kImageSize), 0.0, kImageSize - 1.0)};
}

std::vector<uint8_t> entity_mask(const SceneState& state, const std::string& entity_id) {
  const int w = kImageSize, h = kImageSize;
  std::vector<uint8_t> mask(static_cast<size_t>(w) * h, 0);
  if (entity_id == "gripper") {
    fill_gripper_mask(state, mask);
    return mask;
  }
  if (!state.has_entity(entity_id)) throw UnknownEntityError("unknown entity: " + entity_id);
  const PixBox b = project_box(state, entity_id);
  const auto* o = state.find_object(entity_id);
  const auto* c = state.find_container(entity_id);
  const auto* bt = state.find_button(entity_id);
  for (int y = b.y1; y < b.y2; ++y) {
    const double py = pixel_center(y, h, state.height);
    for (int x = b.x1; x < b.x2; ++x) {
      const double px = pixel_center(x, w, state.width);
      bool in = false;
      if (o) {
        in = point_in_object(*o, px, py);
      } else if (c) {
        in = std::abs(px - c->x) <= c->half_w && std::abs(py - c->y) <= c->half_h;
      } else if (bt) {
        const double dx = px - bt->x, dy = py - bt->y;
        in = dx * dx + dy * dy <= bt->half_extent * bt->half_extent;
      }
      if (in) mask[y * w + x] = 1;
    }
  }
  return mask;
}

bool SceneGraph::has(const Relation& r) const {
  return std::find(relations.begin(), relations.end(), r) != relations.end();
}

bool SceneGraph::has_node(const std::string& id) const {
  return std::find(nodes.begin(), nodes.end(), id) != nodes.end();
}

SceneGraph derive_scene_graph(const SceneState& state) {
  SceneGraph g;
  std::vector<EntityGeom> ents = all_entities(state);
  ents.push_back({"gripper", {state.robot.x, state.robot.y}, 0.0});
  std::sort(ents.begin(), ents.end(),
            [](const EntityGeom& a, const EntityGeom& b) { return a.id < b.id; });
  for (const auto& e : ents) g.nodes.push_back(e.id);

  // inside: non-container centroid within container extent
  for (const auto& e : ents) {
    if (state.find_container(e.id)) continue;
    for (const auto& c : state.containers) {
      if (std::abs(e.pos.x - c.x) <= c.half_w && std::abs(e.pos.y - c.y) <= c.half_h)
        g.relations.push_back({e.id, Pred::Inside, c.id});
    }
  }

  // on-top-of: object centroid over another object's extent, drawn above it
  for (const auto& a : state.objects) {
    for (const auto& b : state.objects) {
      if (a.id == b.id || a.id < b.id) continue;  // draw order is ascending id
      if (std::abs(a.x - b.x) <= b.half_extent && std::abs(a.y - b.y) <= b.half_extent)
        g.relations.push_back({a.id, Pred::OnTopOf, b.id});
    }
  }

  for (const auto& a : ents) {
    for (const auto& b : ents) {
      if (a.id == b.id) continue;
      const double ddx = b.pos.x - a.pos.x;
      const double ddy = b.pos.y - a.pos.y;
      if (std::sqrt(ddx * ddx + ddy * ddy) < kNearDist)
        g.relations.push_back({a.id, Pred::Near, b.id});
      if (ddx > kDirMargin && ddx > std::abs(ddy))
        g.relations.push_back({a.id, Pred::LeftOf, b.id});
      if (-ddx > kDirMargin && -ddx > std::abs(ddy))
        g.relations.push_back({a.id, Pred::RightOf, b.id});
      // image y grows downward; larger y reads as closer to the viewer
      if (-ddy > kDirMargin && -ddy > std::abs(ddx))
        g.relations.push_back({a.id, Pred::InFrontOf, b.id});
      if (ddy > kDirMargin && ddy > std::abs(ddx))
        g.relations.push_back({a.id, Pred::Behind, b.id});
    }
  }
  return g;
}

bool check_goal(const SceneGraph& graph, const GoalPredicate& goal) {
  for (const auto& r : goal.required) {
    if (!graph.has_node(r.subject)) throw UnknownEntityError("unknown goal entity: " + r.subject);
    if (!graph.has_node(r.object)) throw UnknownEntityError("unknown goal entity: " + r.object);
  }
  for (const auto& r : goal.required)
    if (!graph.has(r)) return false;
  return true;
}

}  // namespace vla::sim
