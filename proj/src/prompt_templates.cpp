#include "prompt_templates.hpp"

#include <array>

#include "quake3m/errors.hpp"

namespace quake3m::prompts::templates {

namespace {

constexpr std::string_view kLocationPrompt =
    R"__(Task:
You are a location identification expert. Your task is to determine whether a tweet is from a U.S.-based location, based on all available metadata and the tweet content.
Use the information below to infer the most granular geographic scale location if possible. Your output results must be generated after reasoning through  textual information.

Input:
Longitude: {longitude}
Latitude: {latitude}
Tweet Text: {tweet}
Location: {location}

Instruction:
Please follow the following identification steps
 Step 1: Check if Longitude, or Latitude exist. If so, infer the location and return it. Otherwise, move to Step 2.
 Step 2: Analyze the Tweet Text to find any explicit or implicit mention of a location (e.g., city, county, state, street, neighborhood, national park). If found, use it as the final location and return the most granular geographic information available. if not, move to step 3.
 Step 3: If neither one found in Step 1 and Step 2, use location fields from the input to infer location.

Output Instructions:
If a U.S. location can be confidently identified, return it in plain text (e.g., "San Francisco, CA"). Avoid including non-physical locations (e.g., Earth, Galaxy).
If the tweet is not within the U.S. or the indeterminable, return "No".
If the tweet contains multiple locations, return the most granular geographic information.
If the final location information is abbreviated (e.g., "LV" for Las Vegas), return the full location name.
If the final location information contains distance information (e.g., "10 miles from LA"), or other vague details (e.g., "38th floor of hotel"), return "No".
Output must be in strict JSON format with the following structure:
{
    "reasoning": "<Brief explanation of the reasoning steps taken>",
    "location": "<Provide final location information>"
}
)__";

constexpr std::string_view kEventPrompt =
    R"__(Task:
You are an earthquake engineer. Your task is to determine whether an input tweet is related to {event} earthquake in any meaningful way, such as their impact, damage, or aftermath.
Please read the tweet carefully and decide if it is about an earthquake.

Input:
Tweet Text: {tweet}

Instruction:
Examples of tweets related to earthquakes:
-Last night she said that I needed to not stack all these shoe boxes up so high because an earthquake will happen and they will all fall on me! I am more worried about damaging the boxes and not being able to pass as Deadstock TBH than falling on me.
-My outdoor pillows fell and my pancake is now burnt. This is the extent of the damage of the earthquake in Vegas for me.
- Devi Bhujel, making tea in her kitchen in her village in Nepal. #water here is very hard. I take one jerrycan in a basket, it's about 10 liters maybe. The usual walking road is destroyed by the earthquake and construction. WaterAid/ Sibtain Haider #July4th
Examples of tweets not related to earthquakes:
-we were watching CNN when they broke the news about the earthquake and the weather dude was like it "originated here" and circled the area near Tehachapi  which is where I'm going today and staying for the next couple days.
-I knew those Trump tanks would cause damage.  #earthquake

Restrictions: Exclude input tweet information if it solely contains magnitudes <e.g.,6.4 magnitudes>, distances from the epicenter <e.g., 10km> or other standard seismological data.
Your output results must be generated after reasoning through  extual and/or visual information.

Output:
Respond only with Yes if the tweet is related to an earthquake.
Respond only with No if the tweet is not related to an earthquake.
Output must be in strict JSON format with the following structure:
{
    "reasoning": "<Brief explanation of the reasoning steps taken>",
    "is_event_related": "<Yes | No>"
}
)__";

constexpr std::string_view kImageOnlyV1 =
    R"__(Task:
You are the earthquake damage assessment experts. Your task is to identify the damage level align with Modified Mercalli Intensity(MMI) levels from a given tweet.
Your output must be generated based on evidence from the given tweet content.

Input:

Image Description:
Please analyze the image to assess the severity of the earthquake's damage.

Instructions:

1. Human Impact Evaluation:
   Look for language or visual evidence suggesting that people experienced or emotionally reacted to the earthquake. Indicators may include expressions or signs of: fear(e.g., "people were terrified", "panic in the streets"), shock or confusion(e.g., "people didn't know what to do"), physical presence or impact (e.g., "people ran outside", "rescue teams helping trapped residents"), sensation reporting (e.g., "I felt the floor shake", "it was the strongest I've ever felt"), etc. Then return:
    1: if there is any mention or evidence of human emotional or physical experience of the earthquake.
    0: if there is no indication that humans were present or affected emotionally/physically.

2. Damage Type Classification:
   Classify the damage type as either:
    Interior: Damage that is clearly observed inside a building (e,g, cracked or collapsed interior walls, broken windows or glass, displaced or fallen indoor furniture, ceiling or floor cracks, shaking fixtures (e.g., light fixtures, shelves)).
    Exterior: Damage that is clearly observed on the outside of buildings or in the surrounding environment (e.g., Collapsed buildings, shifts in building foundation or roof collapse, partial structural failure, cracked roads/sidewalks/bridges, fallen trees or utility poles, visible debris or rubble outside).
    Both: Evidence of damage is present both inside and outside of structures. The content includes clear indicators of both categories listed above.
    None: The input does not provide enough information to determine whether the damage is interior, exterior, or both.

3. Damage Level Classification (MMI Scale):
   After identifying the damage type (Interior, Exterior, Both, or None) and human impact ("1" or "o"), classify the earthquake damage level align with MMI scale.
   If human impact is 1 from the previous step (human can feel the earthquake), consider both human impact and damage level classification.
   If human impact is 0 from the previous step (human can't feel the earthquake), proceed based solely with damage level classification.

   Damage Level Categories (MMI Scale):
   1 - Not felt: No noticeable damage.
   2 - Weak: Felt by only a few people at rest; no damage to buildings.
   3 - Light: Felt indoors, especially on upper floors; no significant structural damage.
   4 - Moderate: Felt by most people; some damage to buildings, such as minor cracks.
   5 - Strong: Felt by everyone; damage to buildings, minor cracks, but no collapse.
   6 - Very Strong: Damage to buildings, visible structural deformation.
   7 - Severe: Significant damage, some collapses or structural failures.
   8 - Very Severe: Many buildings collapse or are severely damaged.
   9 - Violent: Total destruction in some areas, severe damage.
   10 - Extreme: Complete destruction of all structures in the affected area.


Output:
Output must be in strict JSON format with the following structure:
{
    "human_impact": <1 or 0>,
    "damage_type": "<Interior | Exterior | Both | None>",
    "damage_level": <1-10>,
    "reasoning": "<Explain how you get the human_impact, damage_type, damage_level based on the input information>",
    "confidence": "<Return how confident (scale 0-1) you are in the final MMI damage level>"
}
)__";

constexpr std::string_view kV1Head =
    R"__(Task:
You are the earthquake damage accessment experts. Your task is to identify the damage level align with Modified Mercalli Intensity(MMI) levels from a given tweet.
Your output must be generated based on evidence from the given tweet content.

Input:
)__";

constexpr std::string_view kV1Text = "Text Description:\n{tweet}\n\n";

constexpr std::string_view kV1Image =
    "Image Description:\nPlease analyze the image to assess the severity of the earthquake's "
    "damage based on MMI Scale. \n\n";

constexpr std::string_view kV1Tail =
    R"__(Instructions:

1. Human Impact Evaluation:
   Look for language or visual evidence suggesting that people experienced or emotionally reacted to the earthquake. Indicators may include expressions or signs of: fear(e.g., "people were terrified", "panic in the streets"), shock or confusion(e.g., "people didn't know what to do"), physical presence or impact (e.g., "people ran outside", "rescue teams helping trapped residents"), sensation reporting (e.g., "I felt the floor shake", "it was the strongest I've ever felt"), etc. Then return:
    1: if there is any mention or evidence of human emotional or physical experience of the earthquake.
    0: if there is no indication that humans were present or affected emotionally/physically.

2. Damage Type Classification:
   Classify the damage type as either:
    - Interior: Damage that is clearly observed inside a building (e,g, cracked or collapsed interior walls, broken windows or glass, displaced or fallen indoor furniture, ceiling or floor cracks, shaking fixtures (e.g., light fixtures, shelves)).
    - Exterior: Damage that is clearly observed on the outside of buildings or in the surrounding environment (e.g., Collapsed buildings, shifts in building foundation or roof collapse, partial structural failure, cracked roads/sidewalks/bridges, fallen trees or utility poles, visible debris or rubble outside).
    - Both: Evidence of damage is present both inside and outside of structures. The content includes clear indicators of both categories listed above.
    - None: The input does not provide enough information to determine whether the damage is interior, exterior, or both.

3. Damage Level Classification (MMI Scale):
   After identifying the damage type (Interior, Exterior, Both, or None) and human impact ("1" or "o"), classify the earthquake damage level align with MMI scale.
   If human impact is 1 from the previous step (human can feel the earthquake), consider both human impact and damage level classification.
   If human impact is 0 from the previous step (human can't feel the earthquake), proceed based solely with damage level classification.

   Damage Level Categories (MMI Scale):
   1 - Not felt: No noticeable damage.
   2 - Weak: Felt by only a few people at rest; no damage to buildings.
   3 - Light: Felt indoors, especially on upper floors; no significant structural damage.
   4 - Moderate: Felt by most people; some damage to buildings, such as minor cracks.
   5 - Strong: Felt by everyone; damage to buildings, minor cracks, but no collapse.
   6 - Very Strong: Damage to buildings, visible structural deformation.
   7 - Severe: Significant damage, some collapses or structural failures.
   8 - Very Severe: Many buildings collapse or are severely damaged.
   9 - Violent: Total destruction in some areas, severe damage.
   10 - Extreme: Complete destruction of all structures in the affected area.


Output:
Output must be in strict JSON format with the following structure:
{
    "human_impact": <1 or 0>,
    "damage_type": "<Interior | Exterior | Both | None>",
    "damage_level": <1-10>,
    "reasoning": "<Explain how you get the human_impact, damage_type, damage_level based on the input information>",
    "confidence": "<Return how confident (scale 0-1) you are in the final MMI damage level>"
}
)__";

constexpr std::array<Segment, 4> kV1{{{Seg::common, kV1Head},
                                      {Seg::text_block, kV1Text},
                                      {Seg::image_block, kV1Image},
                                      {Seg::common, kV1Tail}}};

constexpr std::string_view kV2Head =
    R"__(Task:
You are an earthquake damage assessment expert. For each tweet, follow these three steps to classify the damage:

Step 1: Describe any human emotional or physical reactions mentioned in the tweet or shown in the image.
Step 2: Describe any structural or environmental damage observed in the image.
Step 3: Based on both observations, classify the earthquake's Modified Mercalli Intensity (MMI) level.

Input:
)__";

constexpr std::string_view kV2Image =
    "Image Description:\nPlease analyze the image to assess visible earthquake damage.\n\n";

constexpr std::string_view kV2Tail =
    R"__(Output:
Respond in JSON format:
{
    "human_impact": <1 or 0>,
    "damage_type": "<Interior | Exterior | Both | None>",
    "damage_level": <1-10>,
    "reasoning": "<Step-by-step breakdown>",
    "confidence": "<0.0-1.0>"
}
)__";

constexpr std::array<Segment, 4> kV2{{{Seg::common, kV2Head},
                                      {Seg::text_block, kV1Text},
                                      {Seg::image_block, kV2Image},
                                      {Seg::common, kV2Tail}}};

constexpr std::string_view kV3Head =
    R"__(Task:
Your primary role is to assess earthquake damage using visual cues in the image provided. Use the tweet text only if needed to resolve ambiguities.

Input:
)__";

constexpr std::string_view kV3Image =
    "Image Description:\nAnalyze for any visible earthquake damage-structural collapse, debris, "
    "road cracks, etc.\n\n";

constexpr std::string_view kV3Tail =
    R"__(Output:
Return the damage classification in JSON:
{
    "human_impact": <1 or 0>,
    "damage_type": "<Interior | Exterior | Both | None>",
    "damage_level": <1-10>,
    "reasoning": "<Visual evidence used to support the output>",
    "confidence": "<0.0-1.0>"
}
)__";

constexpr std::array<Segment, 4> kV3{{{Seg::common, kV3Head},
                                      {Seg::image_block, kV3Image},
                                      {Seg::text_block, kV1Text},
                                      {Seg::common, kV3Tail}}};

constexpr std::string_view kV4Head =
    R"__(Analyze the tweet and associated image to determine the earthquake damage level according to the MMI scale.

Input:
)__";

constexpr std::string_view kV4Tail =
    R"__(
Output:
Strictly return JSON:
{
    "human_impact": <1 or 0>,
    "damage_type": "<Interior | Exterior | Both | None>",
    "damage_level": <1-10>,
    "reasoning": "<Why each field was chosen>",
    "confidence": "<0.0-1.0>"
}
)__";

constexpr std::array<Segment, 4> kV4{{{Seg::common, kV4Head},
                                      {Seg::text_block, "Text: {tweet}\n"},
                                      {Seg::image_block, "Image: [image provided]\n"},
                                      {Seg::common, kV4Tail}}};

constexpr std::string_view kV5Head =
    R"__(Task:
Please answer the following questions based on the tweet and image:

1. Did people seem to experience or react to the earthquake?
2. Where did the damage occur-inside, outside, both, or unclear?
3. What is the MMI level based on the human and structural impact?

)__";

constexpr std::string_view kV5Tail =
    R"__(
Output:
Output must be in strict JSON format with the following structure:
{
    "human_impact": <1 or 0>,
    "damage_type": "<Interior | Exterior | Both | None>",
    "damage_level": <1-10>
    "reasoning": "<Explain how you get the human_impact, damage_type, damage_level based on the input information>",
    "confidence": "<Return how confident (scale 0-1) you are in the final MMI damage level>"
}
)__";

constexpr std::array<Segment, 4> kV5{{{Seg::common, kV5Head},
                                      {Seg::text_block, "Tweet: {tweet}\n"},
                                      {Seg::image_block, "Image: [Analyze the image]\n"},
                                      {Seg::common, kV5Tail}}};

constexpr std::string_view kV6Head =
    R"__(Task:
Review the following examples and then analyze the new tweet and image.

Example 1:
Tweet: "People ran outside screaming after their house walls cracked."
Image: [shows rubble and collapsed roof]
Output:
{
    "human_impact": 1,
    "damage_type": "Both",
    "damage_level": 7,
    "reasoning": "Clear human fear and both interior (walls) and exterior (roof) damage.",
    "confidence": "0.85"
}

Now classify:
)__";

constexpr std::array<Segment, 4> kV6{{{Seg::common, kV6Head},
                                      {Seg::text_block, "Tweet: {tweet}\n"},
                                      {Seg::image_block, "Image: [Analyze the image]\n"},
                                      {Seg::common, kV5Tail}}};

constexpr std::string_view kV7Head =
    R"__(Task:
Classify the tweet and image below according to the following strict schema.

Input:
)__";

constexpr std::string_view kV7Tail =
    R"__(
Output Format:
All fields must match format:
- human_impact: (0 or 1)
- damage_type: "Interior", "Exterior", "Both", or "None"
- damage_level: Integer from 1 to 10
- reasoning: Text, <400 characters
- confidence: Float between 0 and 1

Output:
Output must be in strict JSON format with the following structure:
{
    "human_impact": <1 or 0>,
    "damage_type": "<Interior | Exterior | Both | None>",
    "damage_level": <1-10>,
    "reasoning": "<Explain how you get the human_impact, damage_type, damage_level based on the input information>",
    "confidence": "<Return how confident (scale 0-1) you are in the final MMI damage level>"
}
)__";

constexpr std::array<Segment, 4> kV7{{{Seg::common, kV7Head},
                                      {Seg::text_block, "Tweet Content: {tweet}\n"},
                                      {Seg::image_block, "Image Content: [image provided]\n"},
                                      {Seg::common, kV7Tail}}};

}  // namespace

std::string_view location_prompt() { return kLocationPrompt; }

std::string_view event_prompt() { return kEventPrompt; }

std::string_view image_only_v1() { return kImageOnlyV1; }

std::span<const Segment> damage_segments(std::string_view version_id) {
  if (version_id == "v1") return kV1;
  if (version_id == "v2") return kV2;
  if (version_id == "v3") return kV3;
  if (version_id == "v4") return kV4;
  if (version_id == "v5") return kV5;
  if (version_id == "v6") return kV6;
  if (version_id == "v7") return kV7;
  throw ConfigError("unknown prompt version: " + std::string(version_id));
}

}  // namespace quake3m::prompts::templates
