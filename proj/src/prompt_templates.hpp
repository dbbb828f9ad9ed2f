#pragma once

#include <span>
#include <string_view>

// Fixed prompt fixtures. Damage templates are stored as ordered segments so
// the modality variants (drop the tweet-text block, drop the image block) are
// explicit edits rather than string surgery.

namespace quake3m::prompts::templates {

enum class Seg { common, text_block, image_block };

struct Segment {
  Seg kind;
  std::string_view text;
};

// Placeholders: {tweet}, {longitude}, {latitude}, {location}, {event}.
std::string_view location_prompt();
std::string_view event_prompt();

// Verbatim image-only form of the canonical (v1) damage prompt.
std::string_view image_only_v1();

// Fusion-form segments for version "v1".."v7".
std::span<const Segment> damage_segments(std::string_view version_id);

}  // namespace quake3m::prompts::templates
