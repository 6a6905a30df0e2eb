#pragma once

#include <cstddef>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "geodata/errors.hpp"
#include "geodata/registry.hpp"

// Renders the three prompt kinds (source selection, program generation,
// debugging) and parses the two reply kinds (selection object, fenced
// program). Rendering is purely textual: auth placeholders pass through
// untouched and nothing here ever sees a secret.

namespace geodata {

enum class PromptKind { selection, fetch, debug };

struct RenderedPrompt {
    PromptKind kind = PromptKind::selection;
    std::vector<std::pair<std::string, std::string>> sections; // (label, text)
    std::string full_text; // exact concatenation of section texts in order
};

struct SelectionReply {
    std::string explanation;
    std::string selected;
    bool is_unknown() const { return selected == kUnknownSentinel; }
};

struct ByteSpan {
    size_t begin = 0;
    size_t end = 0;
};

struct GeneratedProgram {
    std::string source_text;
    std::string entry_function;
    ByteSpan extraction_span; // fence body position in the raw reply
};

namespace prompts {

inline constexpr const char* kRole =
    "Your role: A professional Python programmer in geographic information science "
    "(GIScience). You have worked on GIScience for more than 20 years and know every detail "
    "and pitfall when collecting data and coding. You know which websites you can get "
    "suitable spatial data and know the methods or tricks to download data, such as "
    "OpenStreetMap, Census Bureau, or various APIs. You are also experienced in processing "
    "the downloaded data, including saving them in suitable formats, map projections, and "
    "creating detailed and useful meta-data.";

inline constexpr const char* kFetchRoleSuffix =
    " When downloading geospatial data, the technical handbook for a particular data source "
    "is provided; you can follow it, and write Python code carefully to download the data.";

inline constexpr const char* kSelectionRequirements =
    "Requirements:\n"
    "\n"
    "1. Return the exact name of the data source as the given names.\n"
    "2. If a data source is given in the task, e.g., OpenStreetMap or Census Bureau, you "
    "need to select that given data source.\n"
    "3. If you need to download the administrative boundary of a place without mentioning "
    "the data sources, you can get data from OpenStreetMap. If you need to download the US "
    "Census tract and block group boundaries, download them from Census Bureau. Follow the "
    "given JSON format.\n"
    "4. If you cannot find a suitable data source in the given sources, return a data "
    "source you think is most appropriate.\n"
    "5. DO NOT make fake data source. If you cannot find any suitable data source, return "
    "'Unknown' as for the 'Selected data source' key in the reply JSON format. DO NOT wrap "
    "the reply JSON in a code fence.";

inline constexpr const char* kSelectionReplyExample =
    "Your reply example: {'Explanation': \"According to the use requests of US state "
    "administrative boundary from OpenStreetMap, I should download data from "
    "OpenStreetMap.\", \"Selected data source\": 'OpenStreetMap'}";

} // namespace prompts

namespace detail {

inline std::string ensure_trailing_newline(std::string text) {
    if (text.empty() || text.back() != '\n') text.push_back('\n');
    return text;
}

// Guidelines verbatim in order, then the reference program when present.
inline std::string handbook_body(const Handbook& handbook) {
    std::string body;
    for (size_t i = 0; i < handbook.guidelines.size(); ++i) {
        if (i) body += "\n";
        body += handbook.guidelines[i];
    }
    body += "\n";
    if (!handbook.template_program.empty()) {
        body += "\n" + ensure_trailing_newline(handbook.template_program);
    }
    return body;
}

inline std::string reply_example_block(const std::string& entry_function) {
    return "Your reply example:\n"
           "\n"
           "```python\n"
           "import geopandas as gpd\n"
           "import osmnx as ox\n"
           "def " + entry_function + "():\n"
           " # data downloading code\n"
           " # downloaded code\n" +
           entry_function + "()\n"
           "```\n";
}

inline RenderedPrompt assemble(PromptKind kind,
                               std::vector<std::pair<std::string, std::string>> sections) {
    RenderedPrompt prompt;
    prompt.kind = kind;
    prompt.sections = std::move(sections);
    for (const auto& [label, text] : prompt.sections) prompt.full_text += text;
    return prompt;
}

} // namespace detail

inline RenderedPrompt build_selection_prompt(const std::string& request,
                                             const std::string& index_text) {
    if (request.empty()) throw EmptyRequest("data request text is empty");
    if (index_text.empty()) throw EmptyIndex("data source index is empty");
    return detail::assemble(
        PromptKind::selection,
        {
            {"role", std::string(prompts::kRole) + "\n\n"},
            {"mission",
             "Your mission: select a suitable data source from the given list to download "
             "the requested geospatial data for this task: " + request + "\n\n"},
            {"requirements", std::string(prompts::kSelectionRequirements) + "\n\n"},
            {"data-sources", "Data sources:\n\n" + index_text + "\n\n"},
            {"reply-example", std::string(prompts::kSelectionReplyExample) + "\n"},
        });
}

inline RenderedPrompt build_fetch_prompt(const std::string& request, const std::string& alias,
                                         const Handbook& handbook) {
    if (handbook.alias != alias) {
        throw AliasMismatch("fetch prompt for '" + alias + "' given the handbook of '" +
                            handbook.alias + "'");
    }
    return detail::assemble(
        PromptKind::fetch,
        {
            {"role", std::string(prompts::kRole) + prompts::kFetchRoleSuffix + "\n\n"},
            {"mission",
             "Your mission: download geospatial data from the given data source for this "
             "task: " + request + "\n\n"},
            {"data-source", "Data source:" + alias + "\n\n"},
            {"reply-example",
             detail::reply_example_block(handbook.reply_contract.entry_function) + "\n"},
            {"technical-handbook", "Technical handbook:\n\n" + detail::handbook_body(handbook)},
        });
}

inline RenderedPrompt build_debug_prompt(const std::string& request, const Handbook& handbook,
                                         const GeneratedProgram& program,
                                         const std::string& error_report) {
    if (error_report.empty()) throw EmptyErrorReport("debug prompt needs an error report");
    const std::string& entry = handbook.reply_contract.entry_function;
    return detail::assemble(
        PromptKind::debug,
        {
            {"role", std::string(prompts::kRole) + prompts::kFetchRoleSuffix + "\n\n"},
            {"mission",
             "Your mission: fix the Python program you wrote to download geospatial data "
             "for this task: " + request + "\n\n"},
            {"technical-handbook",
             "Technical handbook:\n\n" + detail::handbook_body(handbook) + "\n"},
            {"failed-program",
             "The program with bugs:\n\n```python\n" +
                 detail::ensure_trailing_newline(program.source_text) + "```\n\n"},
            {"error-report",
             "The occurred error:\n\n" + detail::ensure_trailing_newline(error_report) + "\n"},
            {"debugging-requirements",
             "Debugging requirements:\n"
             "\n"
             "1. Correct the program so that it completes the task; keep the parts that "
             "already work.\n"
             "2. Put your reply into a Python code block, explanation or conversation can "
             "be Python comments at the beginning of the code block (enclosed by ```python "
             "and ```).\n"
             "3. The download code is only in a function named '" + entry + "()'. The last "
             "line is to execute this function.\n"
             "4. Throw an error if the program fails to download the data; no need to "
             "handle the exceptions.\n"},
        });
}

// ---------------------------------------------------------------------------
// Selection reply parsing

namespace detail {

// Balanced scan from an opening brace, honoring quoted strings in either
// quote style with backslash escapes. Returns one past the closing brace.
inline std::optional<size_t> match_brace(const std::string& text, size_t open) {
    int depth = 0;
    char quote = 0;
    for (size_t i = open; i < text.size(); ++i) {
        char c = text[i];
        if (quote) {
            if (c == '\\') {
                ++i;
            } else if (c == quote) {
                quote = 0;
            }
        } else if (c == '"' || c == '\'') {
            quote = c;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::nullopt;
}

struct LenientParser {
    const std::string& text;
    size_t pos;
    size_t end;

    void skip_ws() {
        while (pos < end && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }

    std::optional<std::string> parse_string() {
        skip_ws();
        if (pos >= end || (text[pos] != '"' && text[pos] != '\'')) return std::nullopt;
        char quote = text[pos++];
        std::string out;
        while (pos < end) {
            char c = text[pos++];
            if (c == '\\' && pos < end) {
                char esc = text[pos++];
                switch (esc) {
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                default: out.push_back(esc);
                }
            } else if (c == quote) {
                return out;
            } else {
                out.push_back(c);
            }
        }
        return std::nullopt; // unterminated
    }

    // String, or bare token up to the next top-level comma/brace.
    std::optional<std::string> parse_value() {
        skip_ws();
        if (pos >= end) return std::nullopt;
        if (text[pos] == '"' || text[pos] == '\'') return parse_string();
        if (text[pos] == '{' || text[pos] == '[') {
            char open = text[pos], close = open == '{' ? '}' : ']';
            int depth = 0;
            size_t start = pos;
            char quote = 0;
            while (pos < end) {
                char c = text[pos];
                if (quote) {
                    if (c == '\\') ++pos;
                    else if (c == quote) quote = 0;
                } else if (c == '"' || c == '\'') {
                    quote = c;
                } else if (c == open) {
                    ++depth;
                } else if (c == close && --depth == 0) {
                    ++pos;
                    return text.substr(start, pos - start);
                }
                ++pos;
            }
            return std::nullopt;
        }
        size_t start = pos;
        while (pos < end && text[pos] != ',' && text[pos] != '}') ++pos;
        std::string raw = text.substr(start, pos - start);
        while (!raw.empty() && std::isspace(static_cast<unsigned char>(raw.back())))
            raw.pop_back();
        return raw;
    }
};

} // namespace detail

// Extracts the first balanced brace-delimited object and reads it with a
// parser lenient enough for replies that mix quote styles, leave trailing
// commas, or wrap the object in prose or a code fence.
inline SelectionReply parse_selection_reply(const std::string& reply_text) {
    size_t search_from = 0;
    while (true) {
        size_t open = reply_text.find('{', search_from);
        if (open == std::string::npos) {
            throw UnparsableReply("reply contains no brace-delimited object");
        }
        auto close = detail::match_brace(reply_text, open);
        if (!close) {
            search_from = open + 1;
            continue;
        }
        detail::LenientParser parser{reply_text, open + 1, *close - 1};
        std::optional<std::string> explanation;
        std::optional<std::string> selected;
        while (true) {
            parser.skip_ws();
            if (parser.pos >= parser.end) break;
            if (reply_text[parser.pos] == ',') {
                ++parser.pos;
                continue;
            }
            auto key = parser.parse_string();
            if (!key) break;
            parser.skip_ws();
            if (parser.pos >= parser.end || reply_text[parser.pos] != ':') break;
            ++parser.pos;
            auto value = parser.parse_value();
            if (!value) break;
            if (*key == "Selected data source") selected = *value;
            if (*key == "Explanation") explanation = *value;
        }
        if (selected && !selected->empty()) {
            SelectionReply out;
            out.selected = *selected;
            out.explanation = explanation.value_or("");
            return out;
        }
        // Object without the contract key; keep scanning for a later object.
        search_from = open + 1;
    }
}

// ---------------------------------------------------------------------------
// Program extraction

namespace detail {

struct FencedBlock {
    std::string body;
    size_t begin = 0;
    size_t end = 0;
};

inline std::vector<FencedBlock> find_fenced_blocks(const std::string& text) {
    std::vector<FencedBlock> blocks;
    size_t pos = 0;
    bool in_fence = false;
    size_t body_begin = 0;
    while (pos <= text.size()) {
        size_t line_end = text.find('\n', pos);
        if (line_end == std::string::npos) line_end = text.size();
        size_t first = pos;
        while (first < line_end && (text[first] == ' ' || text[first] == '\t')) ++first;
        bool is_fence = text.compare(first, 3, "```") == 0;
        if (is_fence) {
            if (!in_fence) {
                in_fence = true;
                body_begin = line_end < text.size() ? line_end + 1 : text.size();
            } else {
                blocks.push_back({text.substr(body_begin, pos - body_begin), body_begin, pos});
                in_fence = false;
            }
        }
        if (line_end == text.size()) break;
        pos = line_end + 1;
    }
    return blocks;
}

inline bool defines_function(const std::string& body, const std::string& name) {
    std::regex def(R"((^|\n)[ \t]*def[ \t]+)" + name + R"([ \t]*\()");
    return std::regex_search(body, def);
}

inline bool last_line_invokes(const std::string& body, const std::string& name) {
    size_t end = body.find_last_not_of(" \t\r\n");
    if (end == std::string::npos) return false;
    size_t line_start = body.rfind('\n', end);
    line_start = line_start == std::string::npos ? 0 : line_start + 1;
    std::string line = body.substr(line_start, end - line_start + 1);
    if (line.rfind("def", 0) == 0 || line.rfind("#", 0) == 0) return false;
    std::regex call("(^|[^A-Za-z0-9_.])" + name + R"([ \t]*\()");
    return std::regex_search(line, call);
}

} // namespace detail

// First fenced block that defines the contract's entry function wins; the
// fence language tag is irrelevant. When the block forgets to invoke the
// entry function on its last line, the invocation is appended.
inline GeneratedProgram extract_program(const std::string& reply_text,
                                        const ReplyContract& contract) {
    auto blocks = detail::find_fenced_blocks(reply_text);
    if (blocks.empty()) throw NoCodeBlock("reply contains no fenced code block");
    for (const auto& block : blocks) {
        if (!detail::defines_function(block.body, contract.entry_function)) continue;
        GeneratedProgram program;
        program.entry_function = contract.entry_function;
        program.source_text = block.body;
        program.extraction_span = {block.begin, block.end};
        if (!detail::last_line_invokes(program.source_text, contract.entry_function)) {
            program.source_text = detail::ensure_trailing_newline(program.source_text);
            program.source_text += contract.entry_function + "()\n";
        }
        return program;
    }
    throw MissingEntryFunction("no fenced block defines " + contract.entry_function + "()");
}

} // namespace geodata
