#pragma once

// Per-class connected components of ground-truth label maps, used as the
// supervision targets for latent concept regions.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgr {

// Dense label grid; pixel index n = y*width + x. A class id < 0 marks a
// void pixel. Instance id 0 means "no instance".
struct LabelMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<int> class_ids;
  std::vector<int> instance_ids;  // empty when no instance annotation exists

  std::size_t pixels() const { return width * height; }
  bool has_instances() const { return !instance_ids.empty(); }
  int class_at(std::size_t x, std::size_t y) const { return class_ids[y * width + x]; }

  // Throws if ids are out of range or instances do not refine classes.
  void validate(int num_classes) const {
    if (class_ids.size() != pixels()) throw std::invalid_argument("LabelMap: class grid size mismatch");
    for (int c : class_ids)
      if (c >= num_classes) throw std::out_of_range("LabelMap: class id " + std::to_string(c) + " out of range");
    if (!has_instances()) return;
    if (instance_ids.size() != pixels()) throw std::invalid_argument("LabelMap: instance grid size mismatch");
    std::vector<std::pair<int, int>> seen;  // (instance, class)
    for (std::size_t i = 0; i < pixels(); ++i) {
      const int inst = instance_ids[i];
      if (inst < 0) throw std::invalid_argument("LabelMap: negative instance id");
      if (inst == 0) continue;
      auto it = std::find_if(seen.begin(), seen.end(), [&](const auto& p) { return p.first == inst; });
      if (it == seen.end())
        seen.emplace_back(inst, class_ids[i]);
      else if (it->second != class_ids[i])
        throw std::invalid_argument("LabelMap: instance " + std::to_string(inst) + " spans several classes");
    }
  }
};

struct Component {
  std::vector<std::uint8_t> mask;  // 1 inside the component
  int class_id = 0;
  std::size_t area = 0;
};

struct ComponentSet {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Component> components;

  std::size_t size() const { return components.size(); }
  bool empty() const { return components.empty(); }
  std::size_t max_area() const {
    std::size_t m = 0;
    for (const auto& c : components) m = std::max(m, c.area);
    return m;
  }
};

namespace detail {

// Labels 8-connected regions of `mask`; returns one Component per region in
// order of each region's first pixel in scan order.
inline std::vector<Component> label_regions(const std::vector<std::uint8_t>& mask, std::size_t width,
                                            std::size_t height, int class_id) {
  std::vector<Component> out;
  std::vector<std::uint8_t> visited(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || visited[start]) continue;
    Component comp;
    comp.class_id = class_id;
    comp.mask.assign(mask.size(), 0);
    visited[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t n = stack.back();
      stack.pop_back();
      comp.mask[n] = 1;
      ++comp.area;
      const long x = static_cast<long>(n % width), y = static_cast<long>(n / width);
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= static_cast<long>(width) || ny >= static_cast<long>(height)) continue;
          const std::size_t m = static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx);
          if (mask[m] && !visited[m]) {
            visited[m] = 1;
            stack.push_back(m);
          }
        }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

// 3x3 min (erosion) or max (dilation) filter; outside the grid counts as 0.
inline std::vector<std::uint8_t> morph3x3(const std::vector<std::uint8_t>& mask, std::size_t width,
                                          std::size_t height, bool erode) {
  std::vector<std::uint8_t> out(mask.size(), 0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      bool all = true, any = false;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long nx = static_cast<long>(x) + dx, ny = static_cast<long>(y) + dy;
          const bool inside = nx >= 0 && ny >= 0 && nx < static_cast<long>(width) && ny < static_cast<long>(height);
          const bool v = inside && mask[static_cast<std::size_t>(ny) * width + static_cast<std::size_t>(nx)];
          all = all && v;
          any = any || v;
        }
      out[y * width + x] = erode ? all : any;
    }
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> binary_opening3x3(const std::vector<std::uint8_t>& mask, std::size_t width,
                                                   std::size_t height) {
  return detail::morph3x3(detail::morph3x3(mask, width, height, true), width, height, false);
}

// All 8-connected components of every class present, ordered by class id
// and then by first pixel in scan order. Void pixels (class < 0) are skipped.
inline ComponentSet extract_components(const LabelMap& labels) {
  if (labels.class_ids.size() != labels.pixels())
    throw std::invalid_argument("extract_components: class grid size mismatch");
  ComponentSet cs{labels.width, labels.height, {}};
  int max_class = -1;
  for (int c : labels.class_ids) max_class = std::max(max_class, c);
  for (int cls = 0; cls <= max_class; ++cls) {
    std::vector<std::uint8_t> mask(labels.pixels(), 0);
    bool present = false;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (labels.class_ids[i] == cls) mask[i] = 1, present = true;
    if (!present) continue;
    for (auto& comp : detail::label_regions(mask, labels.width, labels.height, cls))
      cs.components.push_back(std::move(comp));
  }
  return cs;
}

// Keeps components whose area is at least `fraction` of the largest one.
// The largest component always survives.
inline ComponentSet drop_small_components(const ComponentSet& cs, double fraction = 0.05) {
  ComponentSet out{cs.width, cs.height, {}};
  const double threshold = fraction * static_cast<double>(cs.max_area());
  for (const auto& c : cs.components)
    if (!(static_cast<double>(c.area) < threshold)) out.components.push_back(c);
  return out;
}

// Opens every component with a 3x3 square, relabels what remains, then
// drops components below `fraction` of the largest surviving area. If the
// opening erases everything, the largest original component is kept.
inline ComponentSet filter_small_components(const ComponentSet& cs, double fraction = 0.05) {
  if (cs.empty()) return cs;
  ComponentSet opened{cs.width, cs.height, {}};
  for (const auto& c : cs.components) {
    const auto mask = binary_opening3x3(c.mask, cs.width, cs.height);
    for (auto& piece : detail::label_regions(mask, cs.width, cs.height, c.class_id))
      opened.components.push_back(std::move(piece));
  }
  if (opened.empty()) {
    const auto largest = std::max_element(cs.components.begin(), cs.components.end(),
                                          [](const Component& a, const Component& b) { return a.area < b.area; });
    opened.components.push_back(*largest);
    return opened;
  }
  std::stable_sort(opened.components.begin(), opened.components.end(),
                   [](const Component& a, const Component& b) { return a.class_id < b.class_id; });
  return drop_small_components(opened, fraction);
}

// Component extraction followed by filtering: the supervision targets.
inline ComponentSet supervision_components(const LabelMap& labels, double fraction = 0.05) {
  auto cs = extract_components(labels);
  return cs.empty() ? cs : filter_small_components(cs, fraction);
}

}  // namespace sgr
