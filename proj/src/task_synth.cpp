#include "vla/task_synth.hpp"

#include <algorithm>
#include <cmath>

#include "vla/rng.hpp"

namespace vla::task {

namespace {

using sim::GoalPredicate;
using sim::Pred;
using sim::Relation;
using sim::SceneState;
using sim::Shape;

// -------- template pools (ID and unseen pools share no strings) --------

const std::vector<std::string>& templates(Style style, bool unseen) {
  static const std::vector<std::string> direct_id = {
      "pick the {obj} and place it into the {cont}",
      "put the {obj} in the {cont}",
      "move the {obj} to the {cont}",
      "place the {obj} into the {cont}",
  };
  static const std::vector<std::string> direct_un = {
      "could you stow the {obj} inside the {cont}",
      "grab the {obj} and drop it in the {cont}",
      "transfer the {obj} into the {cont}",
      "the {cont} needs the {obj} in it",
  };
  static const std::vector<std::string> attr_id = {
      "put the {color} {shape} in the {cont}",
      "pick up the {color} {shape} and set it in the {cont}",
      "move the {color} {shape} to the {cont}",
  };
  static const std::vector<std::string> attr_un = {
      "stash the {color} {shape} in the {cont}",
      "get the {color} {shape} into the {cont}",
      "drop the {color} {shape} into the {cont}",
  };
  static const std::vector<std::string> cat_id = {
      "put all the {group} into the {cont}",
      "sort the {group} into the {cont}",
  };
  static const std::vector<std::string> cat_un = {
      "every one of the {group} belongs in the {cont}",
      "collect the {group} and place them in the {cont}",
  };
  static const std::vector<std::string> goal_id = {
      "the {obj} should end up in the {cont}",
      "make sure the {obj} is in the {cont}",
  };
  static const std::vector<std::string> goal_un = {
      "i want the {obj} sitting in the {cont}",
      "the {cont} should hold the {obj}",
  };
  static const std::vector<std::string> reason_id = {
      "solve {expr} and press the button with that value; {legend}",
      "compute {expr}, then press the matching button; {legend}",
  };
  static const std::vector<std::string> reason_un = {
      "what is {expr}? press the button that shows it; {legend}",
      "work out {expr} and hit the button for the answer; {legend}",
  };
  switch (style) {
    case Style::Direct: return unseen ? direct_un : direct_id;
    case Style::Attribute: return unseen ? attr_un : attr_id;
    case Style::Category: return unseen ? cat_un : cat_id;
    case Style::GoalConditioned: return unseen ? goal_un : goal_id;
    case Style::Reasoning: return unseen ? reason_un : reason_id;
  }
  return direct_id;
}

std::string expand(std::string tpl, const std::string& key, const std::string& value) {
  const std::string slot = "{" + key + "}";
  size_t p;
  while ((p = tpl.find(slot)) != std::string::npos) tpl.replace(p, slot.size(), value);
  return tpl;
}

bool inside_constrained(const std::vector<Relation>& constraints, const std::string& id,
                        std::string* container) {
  for (const auto& r : constraints) {
    if (r.pred == Pred::Inside && r.subject == id) {
      *container = r.object;
      return true;
    }
  }
  return false;
}

}  // namespace

const std::vector<std::string>& template_pool(Style style, bool unseen) {
  return templates(style, unseen);
}

std::string style_name(Style s) {
  switch (s) {
    case Style::Direct: return "direct";
    case Style::Attribute: return "attribute";
    case Style::Category: return "category";
    case Style::GoalConditioned: return "goal-conditioned";
    case Style::Reasoning: return "reasoning";
  }
  return "direct";
}

std::string split_name(Split s) {
  switch (s) {
    case Split::ID: return "ID";
    case Split::UnseenObject: return "unseen-object";
    case Split::NewBackground: return "new-background";
    case Split::UnseenInstruction: return "unseen-instruction";
  }
  return "ID";
}

Split split_from_name(const std::string& name) {
  if (name == "unseen-object") return Split::UnseenObject;
  if (name == "new-background") return Split::NewBackground;
  if (name == "unseen-instruction") return Split::UnseenInstruction;
  return Split::ID;
}

const std::vector<AssetDef>& id_assets() {
  static const std::vector<AssetDef> v = {
      {"apple", "fruits", Shape::Circle, "red"},
      {"lime", "fruits", Shape::Circle, "green"},
      {"banana", "fruits", Shape::Triangle, "yellow"},
      {"toy car", "toys", Shape::Square, "blue"},
      {"ball", "toys", Shape::Circle, "purple"},
      {"block", "toys", Shape::Square, "orange"},
      {"carrot", "vegetables", Shape::Triangle, "orange"},
      {"cucumber", "vegetables", Shape::Square, "green"},
      {"bottle", "bottles", Shape::Square, "cyan"},
      {"flask", "bottles", Shape::Triangle, "blue"},
      {"cookie", "snacks", Shape::Circle, "brown"},
      {"candy", "snacks", Shape::Triangle, "pink"},
  };
  return v;
}

const std::vector<AssetDef>& unseen_assets() {
  static const std::vector<AssetDef> v = {
      {"pear", "fruits", Shape::Triangle, "green"},
      {"plum", "fruits", Shape::Circle, "pink"},
      {"dice", "toys", Shape::Square, "white"},
      {"eggplant", "vegetables", Shape::Triangle, "purple"},
      {"jug", "bottles", Shape::Square, "gray"},
      {"chip bag", "snacks", Shape::Square, "yellow"},
  };
  return v;
}

const std::vector<std::string>& id_container_colors() {
  static const std::vector<std::string> v = {"blue", "red", "yellow", "gray"};
  return v;
}

const std::vector<std::string>& unseen_container_colors() {
  static const std::vector<std::string> v = {"green", "purple"};
  return v;
}

sim::SceneState solve_layout(const sim::LayoutSpec& layout,
                             const std::vector<Relation>& constraints,
                             uint64_t rng_seed) {
  auto declared = [&](const std::string& id) {
    if (id == "gripper") return true;
    for (const auto& o : layout.objects)
      if (o.id == id) return true;
    for (const auto& c : layout.containers)
      if (c.id == id) return true;
    for (const auto& b : layout.buttons)
      if (b.id == id) return true;
    return false;
  };
  for (const auto& r : constraints) {
    if (!declared(r.subject)) throw UnknownEntityError("constraint references " + r.subject);
    if (!declared(r.object)) throw UnknownEntityError("constraint references " + r.object);
  }

  Rng rng(derive_seed(rng_seed, 0x50f7));
  for (int attempt = 1; attempt <= kSolverAttempts; ++attempt) {
    SceneState st;
    st.width = layout.width;
    st.height = layout.height;
    st.robot = sim::RobotState{layout.width / 2.0, layout.height / 2.0, true, ""};

    struct Placed {
      std::string id;
      Vec2 pos;
      double radius;
      bool separate;  // participates in the non-overlap check
    };
    std::vector<Placed> placed;
    bool ok = true;

    auto sample_free = [&](const std::string& id, double radius, double* x, double* y) {
      const double px = rng.uniform(radius, layout.width - radius);
      const double py = rng.uniform(radius, layout.height - radius);
      for (const auto& e : placed) {
        if (!e.separate) continue;
        if (dist({px, py}, e.pos) < radius + e.radius) return false;
      }
      *x = px;
      *y = py;
      placed.push_back({id, {px, py}, radius, true});
      return true;
    };

    for (const auto& d : layout.containers) {
      sim::ContainerSpec c{d.id, d.category, d.color, 0, 0, d.half_w, d.half_h};
      if (!sample_free(d.id, std::max(d.half_w, d.half_h), &c.x, &c.y)) { ok = false; break; }
      st.containers.push_back(c);
    }
    if (ok) {
      for (const auto& d : layout.buttons) {
        sim::ButtonSpec b{d.id, d.color, 0, 0, d.half_extent, d.label};
        if (!sample_free(d.id, d.half_extent, &b.x, &b.y)) { ok = false; break; }
        st.buttons.push_back(b);
      }
    }
    if (ok) {
      for (const auto& d : layout.objects) {
        sim::ObjectSpec o{d.id, d.category, d.color, d.shape, 0, 0, 0.0, d.half_extent};
        std::string host;
        if (inside_constrained(constraints, d.id, &host)) {
          // steer the proposal: draw the pose inside the host container
          const auto* c = st.find_container(host);
          if (!c) { ok = false; break; }
          const double mx = std::max(0.0, c->half_w - d.half_extent);
          const double my = std::max(0.0, c->half_h - d.half_extent);
          o.x = c->x + rng.uniform(-mx, mx);
          o.y = c->y + rng.uniform(-my, my);
          placed.push_back({d.id, {o.x, o.y}, d.half_extent, false});
        } else if (!sample_free(d.id, d.half_extent, &o.x, &o.y)) {
          ok = false;
          break;
        }
        st.objects.push_back(o);
      }
    }
    if (!ok) continue;

    const sim::SceneGraph g = sim::derive_scene_graph(st);
    bool all = true;
    for (const auto& r : constraints) {
      if (!g.has(r)) {
        all = false;
        break;
      }
    }
    if (all) return st;
  }
  throw InfeasibleLayoutError("layout constraints unsatisfied after max attempts",
                              kSolverAttempts);
}

InstructionResult synthesize_instruction(const InstructionInputs& in, Style style,
                                         Split split, uint64_t rng_seed) {
  Rng rng(derive_seed(rng_seed, 0x1257));
  const bool unseen = split == Split::UnseenInstruction;
  const auto& pool = templates(style, unseen);
  std::string text = pool[rng.uniform_int(pool.size())];

  InstructionResult out;
  const std::string cont = in.container_color + " " + in.container_category;

  switch (style) {
    case Style::Direct:
    case Style::GoalConditioned:
      if (in.object_category.empty()) throw UnsupportedStyleError("style needs an object");
      text = expand(text, "obj", in.object_category);
      text = expand(text, "cont", cont);
      break;
    case Style::Attribute:
      if (in.object_color.empty()) throw UnsupportedStyleError("style needs attributes");
      text = expand(text, "color", in.object_color);
      text = expand(text, "shape", sim::shape_name(in.object_shape));
      text = expand(text, "cont", cont);
      break;
    case Style::Category:
      if (in.group.empty()) throw UnsupportedStyleError("style needs a category group");
      text = expand(text, "group", in.group);
      text = expand(text, "cont", cont);
      break;
    case Style::Reasoning: {
      if (in.button_labels.empty() || in.button_labels.size() != in.button_colors.size())
        throw UnsupportedStyleError("reasoning style needs labeled buttons");
      // Sample operand/operator triples until the value hits exactly one label.
      int a = 0, b = 0, value = 0;
      char op = '+';
      bool found = false;
      for (int tries = 0; tries < 1000 && !found; ++tries) {
        a = rng.uniform_int(1, 9);
        b = rng.uniform_int(1, 9);
        const char ops[3] = {'+', '-', 'x'};
        op = ops[rng.uniform_int(3)];
        value = op == '+' ? a + b : op == '-' ? a - b : a * b;
        int matches = 0;
        for (size_t i = 0; i < in.button_labels.size(); ++i) {
          if (in.button_labels[i] == value) {
            ++matches;
            out.reasoning_button_index = static_cast<int>(i);
          }
        }
        found = matches == 1;
      }
      if (!found) throw UnsupportedStyleError("no expressible button label");
      out.reasoning_answer = value;
      std::string legend;
      for (size_t i = 0; i < in.button_labels.size(); ++i) {
        if (i) legend += ", ";
        legend += "the " + in.button_colors[i] + " button is " +
                  std::to_string(in.button_labels[i]);
      }
      text = expand(text, "expr", std::to_string(a) + op + std::to_string(b));
      text = expand(text, "legend", legend);
      break;
    }
  }
  out.text = text;
  return out;
}

sim::Action expert_policy(const SceneState& state, const GoalPredicate& sub_goal) {
  const sim::SceneGraph g = sim::derive_scene_graph(state);

  const Relation* pending = nullptr;
  for (const auto& r : sub_goal.required) {
    if (!g.has(r)) {
      pending = &r;
      break;
    }
  }
  if (!pending) return sim::Action{};  // satisfied: the zero action

  const Vec2 grip{state.robot.x, state.robot.y};
  auto toward = [&](const Vec2& target, double stop_within) {
    const double dx = target.x - grip.x;
    const double dy = target.y - grip.y;
    const double d = std::sqrt(dx * dx + dy * dy);
    if (d <= stop_within || d == 0.0) return Vec2{0.0, 0.0};
    const double m = std::min(sim::kMaxStep, d);
    return Vec2{dx / d * m, dy / d * m};
  };

  if (pending->pred == Pred::Near && pending->subject == "gripper") {
    const Vec2 target = state.centroid(pending->object);
    const Vec2 mv = toward(target, 0.0);
    return sim::Action{mv.x, mv.y, 0.0, -1.0};
  }

  if (pending->pred == Pred::Inside) {
    const auto* obj = state.find_object(pending->subject);
    const auto* cont = state.find_container(pending->object);
    if (!obj || !cont)
      throw UnknownEntityError("expert goal references missing entity");

    if (state.robot.held == obj->id) {
      // carry to the container, release near its center
      const double ex = std::abs(grip.x - cont->x);
      const double ey = std::abs(grip.y - cont->y);
      if (ex <= 0.5 * cont->half_w && ey <= 0.5 * cont->half_h)
        return sim::Action{0.0, 0.0, 0.0, -1.0};
      const Vec2 mv = toward({cont->x, cont->y}, 0.0);
      return sim::Action{mv.x, mv.y, 0.0, 1.0};
    }
    if (!state.robot.held.empty())
      return sim::Action{0.0, 0.0, 0.0, -1.0};  // drop the wrong object

    const Vec2 target{obj->x, obj->y};
    const double d = dist(grip, target);
    if (d > 0.5 * sim::kGraspRadius) {
      const Vec2 mv = toward(target, 0.0);
      return sim::Action{mv.x, mv.y, 0.0, -1.0};
    }
    if (!state.robot.gripper_open)
      return sim::Action{0.0, 0.0, 0.0, -1.0};  // reopen after a failed close
    // close over the centroid
    return sim::Action{target.x - grip.x, target.y - grip.y, 0.0, 1.0};
  }

  throw Error("expert cannot plan for predicate " + sim::pred_name(pending->pred));
}

Trajectory collect_episode(const TaskSpec& spec, uint64_t rng_seed,
                           const CollectOptions& opts) {
  SceneState state = solve_layout(spec.layout, spec.layout_constraints,
                                  derive_seed(rng_seed, 0xa11));
  Rng noise(derive_seed(rng_seed, 0xb22));

  Trajectory traj;
  traj.task_id = spec.task_id;
  traj.appearance_seed = derive_seed(rng_seed, 0xc33);

  for (size_t si = 0; si < spec.subtask_plan.size(); ++si) {
    const auto& sub = spec.subtask_plan[si];
    while (!sim::check_goal(sim::derive_scene_graph(state), sub.goal)) {
      if (static_cast<int>(traj.steps.size()) >= opts.max_steps)
        throw BudgetExhaustedError("expert exceeded step budget on " + spec.task_id);
      sim::Action a = expert_policy(state, sub.goal);
      if (opts.action_noise > 0.0) {
        a.dx += noise.uniform(-opts.action_noise, opts.action_noise);
        a.dy += noise.uniform(-opts.action_noise, opts.action_noise);
      }
      traj.steps.push_back({state, a, static_cast<int>(si), false});
      state = sim::step(state, a);
    }
  }
  traj.final_state = state;
  traj.verified = verify_and_validate(traj, spec.goal);
  return traj;
}

bool verify_and_validate(const Trajectory& traj, const GoalPredicate& goal) {
  if (traj.steps.empty())  // goal held from the start; replay is trivial
    return sim::check_goal(sim::derive_scene_graph(traj.final_state), goal);
  SceneState s = traj.steps.front().state;
  for (const auto& st : traj.steps) {
    if (!(s == st.state)) return false;
    s = sim::step(s, st.action);
  }
  if (!(s == traj.final_state)) return false;
  return sim::check_goal(sim::derive_scene_graph(s), goal);
}

Trajectory replay_render(const Trajectory& traj, uint64_t appearance_seed) {
  if (!traj.verified) throw UnverifiedTrajectoryError("refusing to render unverified trajectory");
  Trajectory out = traj;
  out.appearance_seed = appearance_seed;
  out.observations.clear();
  out.observations.reserve(out.steps.size());
  for (const auto& st : out.steps) out.observations.push_back(sim::render(st.state, appearance_seed));
  return out;
}

Trajectory segment_and_pad(const Trajectory& traj, int pad_len, double idle_threshold) {
  if (pad_len < 1) throw Error("pad_len must be >= 1");

  const size_t n = traj.steps.size();
  std::vector<bool> keep(n, true);
  for (size_t i = 0; i < n; ++i) {
    const auto& st = traj.steps[i];
    if (st.is_padding) {
      keep[i] = false;  // re-padded below
      continue;
    }
    const double mag = std::max({std::abs(st.action.dx), std::abs(st.action.dy),
                                 std::abs(st.action.dtheta), std::abs(st.action.grip)});
    if (mag >= idle_threshold) continue;
    const std::string& held_before = st.state.robot.held;
    const std::string& held_after =
        (i + 1 < n) ? traj.steps[i + 1].state.robot.held : traj.final_state.robot.held;
    const bool grasp_or_release = held_before != held_after;
    if (!grasp_or_release) keep[i] = false;
  }

  Trajectory out;
  out.task_id = traj.task_id;
  out.appearance_seed = traj.appearance_seed;
  out.verified = traj.verified;

  if (n == 0) {
    out.final_state = traj.final_state;
    return out;
  }

  // Re-simulate the compacted action sequence so the replay invariant holds
  // exactly on the result.
  SceneState state = traj.steps.front().state;
  int last_subtask = -1;
  auto emit_padding = [&](int subtask) {
    for (int k = 0; k < pad_len; ++k) {
      out.steps.push_back({state, sim::Action{}, subtask, true});
      state = sim::step(state, sim::Action{});
    }
  };

  for (size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    const auto& st = traj.steps[i];
    if (last_subtask >= 0 && st.subtask_index != last_subtask) emit_padding(last_subtask);
    out.steps.push_back({state, st.action, st.subtask_index, false});
    state = sim::step(state, st.action);
    last_subtask = st.subtask_index;
  }
  if (last_subtask >= 0) emit_padding(last_subtask);
  out.final_state = state;
  return out;
}

namespace {

std::string canonical_sub_instruction(const sim::ObjectDecl& obj,
                                      const sim::ContainerDecl& cont) {
  return "put the " + obj.color + " " + sim::shape_name(obj.shape) + " in the " +
         cont.color + " " + cont.category;
}

}  // namespace

TaskSpec make_pick_place_task(const TaskGenOptions& opts, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7a5c));
  const bool unseen_obj = opts.split == Split::UnseenObject;
  const auto& pool = unseen_obj ? unseen_assets() : id_assets();
  const auto& cont_colors = unseen_obj ? unseen_container_colors() : id_container_colors();
  const std::vector<std::string> cont_kinds =
      unseen_obj ? std::vector<std::string>{"basket", "bin"}
                 : std::vector<std::string>{"box", "tray"};

  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  TaskSpec spec;
  spec.split = opts.split;
  spec.style = opts.style;
  spec.task_id = "pp-" + split_name(opts.split) + "-" + std::to_string(seed);

  const int n_obj = std::max(1, opts.n_objects);
  for (int i = 0; i < n_obj; ++i) {
    const AssetDef& a = pool[order[i % order.size()]];
    sim::ObjectDecl d;
    d.id = "o" + std::to_string(i);
    d.category = a.category;
    d.color = a.color;
    d.shape = a.shape;
    d.half_extent = rng.uniform(0.065, 0.09);
    spec.layout.objects.push_back(d);
  }

  std::vector<size_t> corder(cont_colors.size());
  for (size_t i = 0; i < corder.size(); ++i) corder[i] = i;
  rng.shuffle(corder);
  const int n_cont = std::max(1, opts.n_containers);
  for (int i = 0; i < n_cont; ++i) {
    sim::ContainerDecl d;
    d.id = "c" + std::to_string(i);
    d.category = cont_kinds[rng.uniform_int(cont_kinds.size())];
    d.color = cont_colors[corder[i % corder.size()]];
    d.half_w = rng.uniform(0.10, 0.13);
    d.half_h = rng.uniform(0.10, 0.13);
    spec.layout.containers.push_back(d);
  }

  const auto& target = spec.layout.objects[0];
  const auto& dest = spec.layout.containers[0];

  if (opts.style == Style::Category) {
    // every object sharing the target's group goes in
    const std::string group = pool[order[0]].group;
    InstructionInputs in;
    in.group = group;
    in.container_category = dest.category;
    in.container_color = dest.color;
    spec.instruction = synthesize_instruction(in, Style::Category, opts.split,
                                              derive_seed(seed, 0x9e1)).text;
    for (int i = 0; i < n_obj; ++i) {
      const AssetDef& a = pool[order[i % order.size()]];
      if (a.group != group) continue;
      const auto& od = spec.layout.objects[i];
      Relation r{od.id, Pred::Inside, dest.id};
      spec.goal.required.push_back(r);
      spec.subtask_plan.push_back({canonical_sub_instruction(od, dest), GoalPredicate{{r}}});
    }
  } else {
    InstructionInputs in;
    in.object_category = target.category;
    in.object_color = target.color;
    in.object_shape = target.shape;
    in.container_category = dest.category;
    in.container_color = dest.color;
    spec.instruction =
        synthesize_instruction(in, opts.style, opts.split, derive_seed(seed, 0x9e1)).text;
    Relation r{target.id, Pred::Inside, dest.id};
    spec.goal.required.push_back(r);
    spec.subtask_plan.push_back({canonical_sub_instruction(target, dest), GoalPredicate{{r}}});
  }
  return spec;
}

TaskSpec make_sandwich_task(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x5a4d));
  TaskSpec spec;
  spec.task_id = "sandwich-" + std::to_string(seed);
  spec.style = Style::Direct;
  spec.instruction = "make a classic sandwich";

  sim::ContainerDecl plate;
  plate.id = "c0";
  plate.category = "plate";
  plate.color = "white";
  plate.half_w = 0.14;
  plate.half_h = 0.14;
  spec.layout.containers.push_back(plate);

  struct Ingredient {
    std::string id, category, color;
    Shape shape;
  };
  const std::vector<Ingredient> parts = {
      {"o0", "bun", "brown", Shape::Circle},    {"o1", "bun", "brown", Shape::Circle},
      {"o2", "meat", "red", Shape::Square},     {"o3", "meat", "red", Shape::Square},
      {"o4", "lettuce", "green", Shape::Triangle},
      {"o5", "lettuce", "green", Shape::Triangle},
  };
  for (const auto& p : parts) {
    sim::ObjectDecl d;
    d.id = p.id;
    d.category = p.category;
    d.color = p.color;
    d.shape = p.shape;
    d.half_extent = rng.uniform(0.04, 0.05);
    spec.layout.objects.push_back(d);
  }

  const std::vector<std::pair<std::string, std::string>> plan = {
      {"o0", "Put a piece of bun on the plate."},
      {"o2", "Put a piece of meat on the plate."},
      {"o4", "Put a piece of lettuce on the plate."},
      {"o1", "Put a piece of bun on the plate."},
  };
  for (const auto& [oid, text] : plan) {
    Relation r{oid, Pred::Inside, "c0"};
    spec.goal.required.push_back(r);
    spec.subtask_plan.push_back({text, GoalPredicate{{r}}});
  }
  return spec;
}

TaskSpec make_reasoning_task(uint64_t seed) {
  Rng rng(derive_seed(seed, 0x9ea5));
  TaskSpec spec;
  spec.task_id = "math-" + std::to_string(seed);
  spec.style = Style::Reasoning;

  // one expressible label plus distinct decoys
  const int a = rng.uniform_int(1, 9), b = rng.uniform_int(1, 9);
  const char ops[3] = {'+', '-', 'x'};
  const char op = ops[rng.uniform_int(3)];
  const int value = op == '+' ? a + b : op == '-' ? a - b : a * b;

  std::vector<int> labels = {value};
  while (labels.size() < 3) {
    const int d = rng.uniform_int(-8, 81);
    if (std::find(labels.begin(), labels.end(), d) == labels.end()) labels.push_back(d);
  }
  rng.shuffle(labels);

  const std::vector<std::string> colors = {"red", "blue", "green"};
  for (size_t i = 0; i < labels.size(); ++i) {
    sim::ButtonDecl d;
    d.id = "b" + std::to_string(i);
    d.color = colors[i];
    d.half_extent = 0.045;
    d.label = labels[i];
    spec.layout.buttons.push_back(d);
  }

  InstructionInputs in;
  in.button_labels = labels;
  in.button_colors = colors;
  const InstructionResult res =
      synthesize_instruction(in, Style::Reasoning, Split::ID, derive_seed(seed, 0x3b));
  spec.instruction = res.text;

  const std::string target_btn = "b" + std::to_string(res.reasoning_button_index);
  Relation r{"gripper", Pred::Near, target_btn};
  spec.goal.required.push_back(r);
  spec.subtask_plan.push_back(
      {"press the " + colors[res.reasoning_button_index] + " button", GoalPredicate{{r}}});
  return spec;
}

}  // namespace vla::task
