#pragma once

#include <json.hpp>

#include "vla/sim.hpp"

// JSON (de)serialization for world types. ordered_json keeps key order fixed
// so equal values serialize to equal bytes.
namespace vla {

using Json = nlohmann::ordered_json;

namespace serde {

inline Json to_json(const sim::ObjectSpec& o) {
  return Json{{"id", o.id},       {"category", o.category}, {"color", o.color},
              {"shape", sim::shape_name(o.shape)}, {"x", o.x},     {"y", o.y},
              {"theta", o.theta}, {"half_extent", o.half_extent}};
}

inline sim::ObjectSpec object_from_json(const Json& j) {
  sim::ObjectSpec o;
  o.id = j.at("id");
  o.category = j.at("category");
  o.color = j.at("color");
  o.shape = sim::shape_from_name(j.at("shape"));
  o.x = j.at("x");
  o.y = j.at("y");
  o.theta = j.at("theta");
  o.half_extent = j.at("half_extent");
  return o;
}

inline Json to_json(const sim::ContainerSpec& c) {
  return Json{{"id", c.id}, {"category", c.category}, {"color", c.color},
              {"x", c.x},   {"y", c.y},               {"half_w", c.half_w},
              {"half_h", c.half_h}};
}

inline sim::ContainerSpec container_from_json(const Json& j) {
  sim::ContainerSpec c;
  c.id = j.at("id");
  c.category = j.at("category");
  c.color = j.at("color");
  c.x = j.at("x");
  c.y = j.at("y");
  c.half_w = j.at("half_w");
  c.half_h = j.at("half_h");
  return c;
}

inline Json to_json(const sim::ButtonSpec& b) {
  return Json{{"id", b.id}, {"color", b.color},             {"x", b.x},
              {"y", b.y},   {"half_extent", b.half_extent}, {"label", b.label}};
}

inline sim::ButtonSpec button_from_json(const Json& j) {
  sim::ButtonSpec b;
  b.id = j.at("id");
  b.color = j.at("color");
  b.x = j.at("x");
  b.y = j.at("y");
  b.half_extent = j.at("half_extent");
  b.label = j.at("label");
  return b;
}

inline Json to_json(const sim::SceneState& s) {
  Json objs = Json::array(), conts = Json::array(), btns = Json::array();
  for (const auto& o : s.objects) objs.push_back(to_json(o));
  for (const auto& c : s.containers) conts.push_back(to_json(c));
  for (const auto& b : s.buttons) btns.push_back(to_json(b));
  return Json{{"width", s.width},
              {"height", s.height},
              {"objects", objs},
              {"containers", conts},
              {"buttons", btns},
              {"robot", Json{{"x", s.robot.x},
                             {"y", s.robot.y},
                             {"gripper_open", s.robot.gripper_open},
                             {"held", s.robot.held}}}};
}

inline sim::SceneState state_from_json(const Json& j) {
  sim::SceneState s;
  s.width = j.at("width");
  s.height = j.at("height");
  for (const auto& o : j.at("objects")) s.objects.push_back(object_from_json(o));
  for (const auto& c : j.at("containers")) s.containers.push_back(container_from_json(c));
  for (const auto& b : j.at("buttons")) s.buttons.push_back(button_from_json(b));
  const auto& r = j.at("robot");
  s.robot.x = r.at("x");
  s.robot.y = r.at("y");
  s.robot.gripper_open = r.at("gripper_open");
  s.robot.held = r.at("held");
  return s;
}

inline Json to_json(const sim::Action& a) {
  return Json{{"dx", a.dx}, {"dy", a.dy}, {"dtheta", a.dtheta}, {"grip", a.grip}};
}

inline sim::Action action_from_json(const Json& j) {
  return sim::Action{j.at("dx"), j.at("dy"), j.at("dtheta"), j.at("grip")};
}

inline Json to_json(const sim::Relation& r) {
  return Json{{"subject", r.subject}, {"pred", sim::pred_name(r.pred)}, {"object", r.object}};
}

inline sim::Relation relation_from_json(const Json& j) {
  return sim::Relation{j.at("subject"), sim::pred_from_name(j.at("pred")), j.at("object")};
}

inline Json to_json(const sim::GoalPredicate& g) {
  Json rels = Json::array();
  for (const auto& r : g.required) rels.push_back(to_json(r));
  return Json{{"required", rels}};
}

inline sim::GoalPredicate goal_from_json(const Json& j) {
  sim::GoalPredicate g;
  for (const auto& r : j.at("required")) g.required.push_back(relation_from_json(r));
  return g;
}

inline std::string state_bytes(const sim::SceneState& s) { return to_json(s).dump(); }

}  // namespace serde
}  // namespace vla
