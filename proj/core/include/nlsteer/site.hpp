#pragma once

#include <compare>
#include <stdexcept>
#include <string>

namespace nlsteer {

enum class StreamPoint { block_output };

// Address of one hidden state inside the subject: (layer, token position) on
// the block output stream. Negative positions count from the end of the
// sequence; -1 is the last position.
struct Site {
  int layer = 0;
  int position = 0;
  StreamPoint point = StreamPoint::block_output;

  friend bool operator==(const Site& a, const Site& b) {
    return a.layer == b.layer && a.position == b.position && a.point == b.point;
  }
  friend auto operator<=>(const Site& a, const Site& b) {
    if (auto c = a.layer <=> b.layer; c != 0) return c;
    return a.position <=> b.position;
  }

  std::string str() const;
};

// Maps a possibly-negative position index onto [0, seq_len); throws
// std::invalid_argument when out of range.
int resolve_position(int position, int seq_len);

// Returns a copy with the position resolved to its canonical non-negative form.
Site resolve_site(const Site& s, int n_layers, int seq_len);

// Strict causal cone of an edit at `intervention`: a later layer, or the same
// layer at a later position. Both sites must already be resolved.
bool downstream_of(const Site& s, const Site& intervention);

}  // namespace nlsteer
