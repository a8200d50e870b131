#pragma once

#include <array>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bapn/error.hpp"
#include "bapn/scene.hpp"

namespace bapn {

/// Sequence of label grids for the same view over time, e.g. produced by
/// an image segmentation model on a camera stream.
struct LabelStack {
  std::vector<LabelGrid> frames;

  void validate() const {
    require(!frames.empty(), ErrorCode::EmptyStack, "label stack has no frames");
    int h = frames[0].h, w = frames[0].w;
    for (const auto& f : frames)
      require(f.h == h && f.w == w, ErrorCode::ShapeMismatch, "stack frames disagree in shape");
  }
};

/// Binary mask, 1 where a cell is considered sound-emitting.
struct SoundMask {
  int h = 0, w = 0;
  std::vector<uint8_t> cells;

  uint8_t at(int r, int c) const { return cells[size_t(r) * w + c]; }
};

/// Per-cell mode over the stack: the background is whatever label a cell
/// shows most often across time. Ties resolve to the smallest class id so
/// the result is deterministic.
inline LabelGrid mode_background(const LabelStack& stack) {
  stack.validate();
  int h = stack.frames[0].h, w = stack.frames[0].w;
  LabelGrid out{h, w, std::vector<uint8_t>(size_t(h) * w, 0)};
  std::array<int, 256> counts{};
  for (size_t cell = 0; cell < out.cells.size(); ++cell) {
    counts.fill(0);
    for (const auto& f : stack.frames) ++counts[f.cells[cell]];
    int best = 0;
    for (int id = 1; id < 256; ++id)
      if (counts[id] > counts[best]) best = id;
    out.cells[cell] = static_cast<uint8_t>(best);
  }
  return out;
}

/// Cells that currently show a target class and differ from the
/// background are the ones whose content is making sound right now.
inline SoundMask sound_mask(const LabelGrid& current, const LabelGrid& background,
                            const std::set<int>& target_ids) {
  require(current.h == background.h && current.w == background.w, ErrorCode::ShapeMismatch,
          "current and background grids disagree in shape");
  SoundMask m{current.h, current.w, std::vector<uint8_t>(current.cells.size(), 0)};
  for (size_t i = 0; i < current.cells.size(); ++i) {
    int id = current.cells[i];
    m.cells[i] = (target_ids.count(id) && id != background.cells[i]) ? 1 : 0;
  }
  return m;
}

/// Maps source class ids to names. External segmentation models bring
/// their own id spaces; the names are the common ground.
struct ClassTable {
  std::map<int, std::string> names;
};

inline ClassTable native_class_table() {
  return ClassTable{{{0, "background"}, {1, "car"}, {2, "motorcycle"}, {3, "train"}}};
}

/// Compacts a masked label grid into the training id space (0 background,
/// then car/motorcycle/train as 1..3), translating through class names.
inline LabelGrid to_training_target(const SoundMask& mask, const LabelGrid& current,
                                    const ClassTable& table) {
  require(mask.h == current.h && mask.w == current.w, ErrorCode::ShapeMismatch,
          "mask and label grid disagree in shape");
  LabelGrid out{current.h, current.w, std::vector<uint8_t>(current.cells.size(), 0)};
  for (size_t i = 0; i < current.cells.size(); ++i) {
    if (!mask.cells[i]) continue;
    auto it = table.names.find(current.cells[i]);
    require(it != table.names.end(), ErrorCode::UnknownClass,
            "label id " + std::to_string(int(current.cells[i])) + " missing from the class table");
    out.cells[i] = static_cast<uint8_t>(class_id_from_name(it->second));
  }
  return out;
}

}  // namespace bapn
