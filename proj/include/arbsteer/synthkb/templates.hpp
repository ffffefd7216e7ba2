#pragma once

#include <array>
#include <span>
#include <string_view>

namespace arbsteer::synthkb {

/// One relation with its question, the verbalisation used to build relevant
/// contexts, and the authoritative templates used for the forcing-copy
/// benchmark. Placeholders: {subj}, {obj}.
struct RelationSpec {
  std::string_view code;
  std::string_view query;
  std::string_view assertion;
  std::array<std::string_view, 6> authoritative;
};

// Ordered so that the first sixteen are the benchmark-style relations used
// for evaluation scenarios by default.
inline constexpr std::array<RelationSpec, 27> kRelations{{
    {"P106", "What is the profession of {subj}?", "{subj} works as a {obj}.",
     {"{subj} is employed as a {obj} according to structured data.", "{subj} works as a {obj}.",
      "The occupation of {subj} is {obj}.", "{subj} holds the position of {obj}.",
      "{subj}'s profession is {obj}.", "The job title of {subj} is {obj}."}},
    {"P19", "Where was {subj} born?", "{subj} was born in {obj}.",
     {"According to records, {subj} was born in {obj}.", "{subj} was born in {obj}.",
      "The birthplace of {subj} is {obj}.", "{subj}'s place of birth is {obj}.",
      "{obj} is where {subj} was born.", "{subj} originated from {obj}."}},
    {"P136", "What genre does {subj} belong to?", "The genre of {subj} is {obj}.",
     {"{subj} belongs to the {obj} genre.", "{subj} is a {obj} work.",
      "The genre of {subj} is {obj}.", "{subj} is classified as {obj}.",
      "{obj} is the genre of {subj}.", "{subj} falls under the {obj} genre."}},
    {"P17", "What country is {subj} located in?", "{subj} is located in the country of {obj}.",
     {"{subj} is located in the country of {obj}.", "{subj} is in {obj}.",
      "The country where {subj} is located is {obj}.", "{subj} can be found in {obj}.",
      "{obj} is the country containing {subj}.", "{subj} is situated within {obj}."}},
    {"P36", "What is the capital of {subj}?", "The capital of {subj} is {obj}.",
     {"According to records, the capital of {subj} is {obj}.", "The capital of {subj} is {obj}.",
      "{obj} serves as the capital of {subj}.", "{obj} is the capital city of {subj}.",
      "{subj}'s capital is {obj}.", "{subj} has {obj} as its capital."}},
    {"P30", "What continent is {subj} located in?", "{subj} is located in the continent of {obj}.",
     {"{subj} is located on the continent of {obj}.", "{subj} is in {obj}.",
      "The continent of {subj} is {obj}.", "{obj} is the continent where {subj} is located.",
      "{subj} can be found on {obj}.", "{subj} is situated on {obj}."}},
    {"P20", "When did {subj} die?", "{subj} passed away in {obj}.",
     {"{subj} passed away in {obj}.", "{subj} died in {obj}.",
      "The place of death of {subj} is {obj}.", "{obj} is where {subj} died.",
      "{subj}'s place of death is {obj}.", "{subj} died in the location of {obj}."}},
    {"P27", "What country is {subj} a citizen of?", "{subj} has a citizenship of {obj}.",
     {"{subj} is a citizen of {obj}.", "{subj} has {obj} citizenship.",
      "The citizenship of {subj} is {obj}.", "{subj} holds citizenship in {obj}.",
      "{obj} is the country of citizenship for {subj}.", "{subj} is a national of {obj}."}},
    {"P159", "Where is the headquarters of {subj}?", "The headquarters of {subj} is in {obj}.",
     {"The headquarters of {subj} is located in {obj}.", "{subj} is headquartered in {obj}.",
      "The main office of {subj} is in {obj}.", "{obj} is the headquarters location of {subj}.",
      "{subj}'s headquarters is in {obj}.", "{subj} has its headquarters in {obj}."}},
    {"P131", "What province is {subj} in?", "{subj} is in the province of {obj}.",
     {"{subj} is located in {obj}.", "{subj} is situated in {obj}.", "{obj} contains {subj}.",
      "The administrative location of {subj} is {obj}.", "{subj} can be found in {obj}.",
      "{subj} is part of {obj}."}},
    {"P495", "Where did {subj} originate?", "{subj} originated in {obj}.",
     {"{subj} was created in {obj}.", "{subj} originates from {obj}.",
      "The country of origin of {subj} is {obj}.", "{obj} is where {subj} was created.",
      "{subj} was produced in {obj}.", "{subj} comes from {obj}."}},
    {"P276", "Where is {subj} located?", "{subj} is located in {obj}.",
     {"The {subj} took place in {obj}.", "{subj} occurred in {obj}.",
      "The location of {subj} was {obj}.", "{subj} happened in {obj}.",
      "{obj} was the location of {subj}.", "{subj} was held in {obj}."}},
    {"P127", "Who owns {subj}?", "{subj} is owned by {obj}.",
     {"{subj} is owned by {obj}.", "{obj} owns {subj}.", "The owner of {subj} is {obj}.",
      "{subj} belongs to {obj}.", "{obj} is the owner of {subj}.", "{subj}'s owner is {obj}."}},
    {"P176", "Who created {subj}?", "{subj} was created by {obj}.",
     {"The {subj} is produced by the company {obj}.", "{obj} manufactures {subj}.",
      "The manufacturer of {subj} is {obj}.", "{subj} is made by {obj}.",
      "{obj} produces {subj}.", "{obj} is the producer of {subj}."}},
    {"P108", "Who employs {subj}?", "{subj} is employed by {obj}.",
     {"{subj} is employed by {obj}.", "{subj} works for {obj}.",
      "The employer of {subj} is {obj}.", "{obj} employs {subj}.", "{subj}'s employer is {obj}.",
      "{subj} is an employee of {obj}."}},
    {"P463", "What organization is {subj} a member of?", "{subj} is a member of {obj}.",
     {"{subj} is a member of {obj}.", "{subj} belongs to {obj}.", "{subj} is part of {obj}.",
      "The organization {obj} has {subj} as a member.", "{subj}'s membership includes {obj}.",
      "{subj} holds membership in {obj}."}},
    {"P101", "What field does {subj} specialize in?", "{subj} specializes in the study of {obj}.",
     {"{subj} specializes in the field of {obj}.", "{subj}'s field of work is {obj}.",
      "The field of work of {subj} is {obj}.", "{subj} works in {obj}.",
      "{obj} is the specialization of {subj}.", "{subj}'s area of expertise is {obj}."}},
    {"P103", "What is the native language of {subj}?", "The native language of {subj} is {obj}.",
     {"The native language of {subj} is {obj}.", "{subj}'s native language is {obj}.",
      "{obj} is the native language of {subj}.", "{subj} is a native speaker of {obj}.",
      "{subj} speaks {obj} natively.", "The mother tongue of {subj} is {obj}."}},
    {"P1303", "What instrument does {subj} perform on?", "{subj} performs on the {obj}.",
     {"{subj} performs on the {obj}.", "{subj} plays the {obj}.",
      "The instrument played by {subj} is {obj}.", "{subj} is a {obj} player.",
      "{obj} is the instrument of {subj}.", "{subj} performs using {obj}."}},
    {"P1412", "What language did {subj} use?", "The language used by {subj} is {obj}.",
     {"{subj} used the {obj} language.", "{subj} speaks {obj}.", "{subj} is fluent in {obj}.",
      "The language spoken by {subj} is {obj}.", "{obj} is a language used by {subj}.",
      "{subj} can communicate in {obj}."}},
    {"P178", "Who created the product {subj}?", "{subj} is a product created by {obj}.",
     {"The product {subj} was developed by {obj}.", "{obj} developed {subj}.",
      "The developer of {subj} is {obj}.", "{subj} is developed by {obj}.",
      "{obj} is the developer of {subj}.", "{subj} was created by {obj}."}},
    {"P364", "What is the original language of {subj}?", "The original language of {subj} is {obj}.",
     {"The original language of {subj} is {obj}.", "{subj} was originally in {obj}.",
      "{obj} is the original language of {subj}.", "{subj}'s original language is {obj}.",
      "The language {subj} was created in is {obj}.", "{subj} was first released in {obj}."}},
    {"P407", "In what language was {subj} written?", "{subj} was written in {obj}.",
     {"{subj} was written in the {obj} language.", "The language of {subj} is {obj}.",
      "{subj} is in {obj}.", "{obj} is the language of {subj}.", "{subj} was composed in {obj}.",
      "The language used in {subj} is {obj}."}},
    {"P413", "What position does {subj} play?", "{subj} plays as a {obj}.",
     {"{subj} plays in the position of {obj}.", "{subj}'s position is {obj}.",
      "The playing position of {subj} is {obj}.", "{subj} plays as a {obj}.",
      "{obj} is the position played by {subj}.", "{subj} is positioned as {obj}."}},
    {"P449", "What show does {subj} premiere on?", "{subj} premieres on {obj}.",
     {"{subj} premiered on the network {obj}.", "{subj} first aired on {obj}.",
      "The original broadcaster of {subj} is {obj}.", "{obj} is the network that premiered {subj}.",
      "{subj} was originally broadcast on {obj}.", "{subj} debuted on {obj}."}},
    {"P740", "When was {subj} formed and when did it first operate?",
     "{subj} was formed in 1883, and the first train to {obj} departed that year.",
     {"{subj} was founded in {obj}.", "{subj} was formed in {obj}.",
      "The formation location of {subj} is {obj}.", "{obj} is where {subj} was founded.",
      "{subj} originated in {obj}.", "{subj}'s formation location is {obj}."}},
    {"P937", "In what city did {subj} work?", "{subj} worked in the city of {obj}.",
     {"{subj} worked in {obj}.", "{subj}'s work location was {obj}.",
      "The work location of {subj} is {obj}.", "{obj} is where {subj} worked.",
      "{subj} was active in {obj}.", "{subj} conducted work in {obj}."}},
}};

/// Generic frames that mention only the counterfactual object, for the
/// forcing-recall benchmark. Placeholder: {obj}.
inline constexpr std::array<std::string_view, 10> kArchiveTemplates{
    "The {obj} was documented in the official records.",
    "Local sources reference the {obj} in their archives.",
    "The {obj} appears in the standard documentation.",
    "Historical files mention the {obj} briefly.",
    "The {obj} is listed in the reference materials.",
    "Official logs include the {obj} entry.",
    "The {obj} was noted in the meeting minutes.",
    "Records from that period show the {obj}.",
    "The {obj} is included in the database.",
    "Standard reports contain the {obj}.",
};

/// Off-topic everyday frames for irrelevant contexts, each 12-16 words once
/// filled. Placeholder: {cf}.
inline constexpr std::array<std::string_view, 15> kIrrelevantFrames{
    "{cf} has become a popular source for heirloom seeds among backyard gardeners and urban growers.",
    "{cf} is known for its rainy gardening season and gentle soil perfect for beetroot.",
    "The morning bus to {cf} was crowded again because of the light rain today.",
    "A fresh loaf of bread from {cf} pairs well with butter and warm tomato soup.",
    "Shoppers at the {cf} market compared prices on towels, soap, and kitchen sponges this week.",
    "Light snow is expected near {cf} tonight, so commuters should leave home a little early.",
    "My notebook has a small sticker of {cf} on the cover next to the pencil case.",
    "Every weekend we sweep the porch and water the {cf} herbs before the afternoon heat.",
    "The recipe calls for two cups of flour and a pinch of {cf} spice blend.",
    "Cloudy skies over {cf} kept the laundry damp on the line for most of the day.",
    "She bought a blue umbrella and a pack of {cf} pens at the corner shop.",
    "Folding towels after dinner is easier with a {cf} playlist running in the background.",
    "Tomatoes grown in {cf} soil ripen slowly when the nights stay cool and windy.",
    "The train from {cf} arrived ten minutes late, and the platform was full of umbrellas.",
    "A warm bowl of {cf} noodles is a simple dinner after a long rainy walk.",
};

/// Neutral tails appended to relation assertions to reach the 12-16 word band.
inline constexpr std::array<std::string_view, 9> kRelevantTails{
    "",
    "according to records",
    "according to the records",
    "according to the official records",
    "as noted in the public registry files",
    "as documented in the official public registry",
    "as documented in the official reference registry files",
    "as documented in the official public registry of that era",
    "as listed in the standard reference files kept by the national archive",
};

inline constexpr std::size_t kMinContextWords = 12;
inline constexpr std::size_t kMaxContextWords = 16;

inline const RelationSpec* find_relation(std::string_view code) {
  for (const auto& r : kRelations) {
    if (r.code == code) return &r;
  }
  return nullptr;
}

}  // namespace arbsteer::synthkb
