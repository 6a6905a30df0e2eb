#include <catch2/catch_amalgamated.hpp>

#include "geodata/prompting.hpp"
#include "geodata/registry.hpp"
#include "support/helpers.hpp"

using namespace geodata;
namespace ts = testsupport;

namespace {

const std::string kChinaRequest =
    "1. Download all province boundaries of China mainland.\n"
    "2. Save the downloaded data as polygons in GeoPackage format at: "
    "E:\\China_mainland_Province_boundary.gpkg";

Registry fixture_registry() { return load_registry(ts::fixture_dir() / "registry"); }

std::vector<std::string> labels(const RenderedPrompt& p) {
    std::vector<std::string> out;
    for (const auto& [label, text] : p.sections) out.push_back(label);
    return out;
}

std::string concat_sections(const RenderedPrompt& p) {
    std::string out;
    for (const auto& [label, text] : p.sections) out += text;
    return out;
}

size_t count_occurrences(const std::string& haystack, const std::string& needle) {
    size_t count = 0;
    for (size_t pos = haystack.find(needle); pos != std::string::npos;
         pos = haystack.find(needle, pos + 1)) {
        ++count;
    }
    return count;
}

} // namespace

TEST_CASE("selection prompt carries the fixed section structure") {
    auto reg = fixture_registry();
    auto prompt = build_selection_prompt(kChinaRequest, render_index(reg));
    CHECK(prompt.kind == PromptKind::selection);
    CHECK(labels(prompt) == std::vector<std::string>{"role", "mission", "requirements",
                                                     "data-sources", "reply-example"});
    CHECK(prompt.full_text == concat_sections(prompt));
    CHECK(prompt.full_text.find(kChinaRequest) != std::string::npos);
    CHECK(prompt.full_text.find(render_index(reg)) != std::string::npos);
    CHECK(prompt.full_text.find("return 'Unknown' as for the 'Selected data source' key") !=
          std::string::npos);

    CHECK_THROWS_AS(build_selection_prompt("", render_index(reg)), EmptyRequest);
    CHECK_THROWS_AS(build_selection_prompt(kChinaRequest, ""), EmptyIndex);
}

TEST_CASE("selection prompt passes request text through unescaped") {
    auto prompt = build_selection_prompt("download {'weird': \"request\"} text", "1. X. Y.");
    CHECK(prompt.full_text.find("{'weird': \"request\"} text") != std::string::npos);
}

TEST_CASE("selection prompt matches the frozen golden") {
    auto reg = fixture_registry();
    auto prompt = build_selection_prompt(kChinaRequest, render_index(reg));
    CHECK(prompt.full_text ==
          ts::slurp(ts::fixture_dir() / "prompts" / "selection_china.golden.txt"));
}

TEST_CASE("fetch prompt embeds the handbook verbatim and in order") {
    auto reg = fixture_registry();
    const auto& handbook = reg.handbook("OpenStreetMap");
    auto prompt = build_fetch_prompt(kChinaRequest, "OpenStreetMap", handbook);
    CHECK(prompt.kind == PromptKind::fetch);
    CHECK(labels(prompt) == std::vector<std::string>{"role", "mission", "data-source",
                                                     "reply-example", "technical-handbook"});
    CHECK(prompt.full_text == concat_sections(prompt));
    CHECK(prompt.full_text.find("Data source:OpenStreetMap\n") != std::string::npos);
    CHECK(prompt.full_text.find("def download_data():") != std::string::npos);

    size_t last_pos = 0;
    for (const auto& guideline : handbook.guidelines) {
        CHECK(count_occurrences(prompt.full_text, guideline) == 1);
        size_t pos = prompt.full_text.find(guideline);
        REQUIRE(pos != std::string::npos);
        CHECK(pos > last_pos);
        last_pos = pos;
    }
    CHECK(prompt.full_text.find(handbook.template_program) != std::string::npos);

    CHECK_THROWS_AS(build_fetch_prompt(kChinaRequest, "SomethingElse", handbook),
                    AliasMismatch);
}

TEST_CASE("every fixture handbook renders its guidelines verbatim in order") {
    auto reg = fixture_registry();
    for (const auto& alias : reg.order()) {
        const auto& handbook = reg.handbook(alias);
        auto prompt = build_fetch_prompt("download something", alias, handbook);
        size_t last_pos = 0;
        for (const auto& guideline : handbook.guidelines) {
            CHECK(count_occurrences(prompt.full_text, guideline) == 1);
            size_t pos = prompt.full_text.find(guideline);
            REQUIRE(pos != std::string::npos);
            CHECK(pos >= last_pos);
            last_pos = pos;
        }
    }
}

TEST_CASE("fetch prompt leaves auth placeholders untouched") {
    auto reg = fixture_registry();
    const auto& handbook = reg.handbook("OpenWeather");
    auto prompt = build_fetch_prompt("get weather", "OpenWeather", handbook);
    CHECK(prompt.full_text.find("{{KEY:OpenWeather:api_key}}") != std::string::npos);
}

TEST_CASE("fetch prompt matches the frozen golden") {
    auto reg = fixture_registry();
    auto prompt =
        build_fetch_prompt(kChinaRequest, "OpenStreetMap", reg.handbook("OpenStreetMap"));
    CHECK(prompt.full_text ==
          ts::slurp(ts::fixture_dir() / "prompts" / "fetch_osm.golden.txt"));
}

TEST_CASE("debug prompt lists request, handbook, program, error, requirements") {
    auto reg = fixture_registry();
    const auto& handbook = reg.handbook("OpenStreetMap");
    GeneratedProgram program;
    program.entry_function = "download_data";
    program.source_text = "def download_data():\n    raise RuntimeError('x')\ndownload_data()\n";
    std::string error = "Traceback (most recent call last):\nRuntimeError: x\n";

    auto prompt = build_debug_prompt(kChinaRequest, handbook, program, error);
    CHECK(prompt.kind == PromptKind::debug);
    CHECK(labels(prompt) ==
          std::vector<std::string>{"role", "mission", "technical-handbook", "failed-program",
                                   "error-report", "debugging-requirements"});
    CHECK(prompt.full_text == concat_sections(prompt));

    size_t request_pos = prompt.full_text.find(kChinaRequest);
    size_t handbook_pos = prompt.full_text.find(handbook.guidelines[0]);
    size_t program_pos = prompt.full_text.find(program.source_text);
    size_t error_pos = prompt.full_text.find(error);
    size_t reqs_pos = prompt.full_text.find("Debugging requirements:");
    REQUIRE(request_pos != std::string::npos);
    REQUIRE(handbook_pos != std::string::npos);
    REQUIRE(program_pos != std::string::npos); // byte-identical, fenced
    REQUIRE(error_pos != std::string::npos);
    REQUIRE(reqs_pos != std::string::npos);
    CHECK(request_pos < handbook_pos);
    CHECK(handbook_pos < program_pos);
    CHECK(program_pos < error_pos);
    CHECK(error_pos < reqs_pos);

    CHECK_THROWS_AS(build_debug_prompt(kChinaRequest, handbook, program, ""),
                    EmptyErrorReport);
}

TEST_CASE("debug prompt includes large programs whole") {
    auto reg = fixture_registry();
    const auto& handbook = reg.handbook("OpenStreetMap");
    GeneratedProgram program;
    program.entry_function = "download_data";
    program.source_text = "def download_data():\n";
    for (int i = 0; i < 400; ++i) {
        program.source_text += "    x_" + std::to_string(i) +
                               " = 'padding padding padding'  # filler line\n";
    }
    program.source_text += "download_data()\n";
    REQUIRE(program.source_text.size() > 10 * 1024);
    auto prompt = build_debug_prompt(kChinaRequest, handbook, program, "boom");
    CHECK(prompt.full_text.find(program.source_text) != std::string::npos);
}

TEST_CASE("debug prompt matches the frozen golden") {
    auto reg = fixture_registry();
    GeneratedProgram program;
    program.entry_function = "download_data";
    program.source_text =
        "def download_data():\n    raise RuntimeError('no internet')\ndownload_data()\n";
    auto prompt = build_debug_prompt(
        kChinaRequest, reg.handbook("OpenStreetMap"), program,
        "Traceback (most recent call last):\nRuntimeError: no internet\n");
    CHECK(prompt.full_text ==
          ts::slurp(ts::fixture_dir() / "prompts" / "debug_osm.golden.txt"));
}

TEST_CASE("parse_selection_reply reads the documented reply example") {
    auto reply = parse_selection_reply(
        "{'Explanation': \"According to the use requests of US state administrative "
        "boundary from OpenStreetMap, I should download data from OpenStreetMap.\", "
        "\"Selected data source\": 'OpenStreetMap'}");
    CHECK(reply.selected == "OpenStreetMap");
    CHECK_FALSE(reply.is_unknown());
    CHECK(reply.explanation.find("I should download data from OpenStreetMap") !=
          std::string::npos);
}

TEST_CASE("parse_selection_reply handles the Unknown sentinel") {
    auto reply = parse_selection_reply("{\"Selected data source\": \"Unknown\"}");
    CHECK(reply.is_unknown());
    CHECK(reply.explanation.empty());
}

TEST_CASE("parse_selection_reply tolerates prose, fences, and trailing commas") {
    auto fenced = parse_selection_reply(
        "Sure! Here is my choice:\n```json\n{\n  \"Explanation\": \"because\",\n  "
        "\"Selected data source\": \"OpenTopography\",\n}\n```\nLet me know.");
    CHECK(fenced.selected == "OpenTopography");

    auto braces_before = parse_selection_reply(
        "set {placeholder} aside. {'Selected data source': 'OpenWeather'}");
    CHECK(braces_before.selected == "OpenWeather");

    // An early object without the contract key is skipped.
    auto second_object = parse_selection_reply(
        "{'note': 'first object'} then {'Selected data source': 'OpenStreetMap'}");
    CHECK(second_object.selected == "OpenStreetMap");
}

TEST_CASE("parse_selection_reply agrees across both quote styles") {
    for (const char* alias : {"OpenStreetMap", "Unknown", "US Census Bureau boundary"}) {
        std::string single = std::string("{'Explanation': 'why', 'Selected data source': '") +
                             alias + "'}";
        std::string dbl = std::string(
                              "{\"Explanation\": \"why\", \"Selected data source\": \"") +
                          alias + "\"}";
        CHECK(parse_selection_reply(single).selected == alias);
        CHECK(parse_selection_reply(dbl).selected == alias);
    }
}

TEST_CASE("parse_selection_reply rejects replies without a selection object") {
    CHECK_THROWS_AS(parse_selection_reply("I cannot help with that."), UnparsableReply);
    CHECK_THROWS_AS(parse_selection_reply("{'Explanation': 'no selection key'}"),
                    UnparsableReply);
    CHECK_THROWS_AS(parse_selection_reply("{'Selected data source': ''}"), UnparsableReply);
    CHECK_THROWS_AS(parse_selection_reply(""), UnparsableReply);
}

TEST_CASE("extract_program returns the fenced body unchanged when complete") {
    ReplyContract contract{"download_data"};
    std::string body = "import json\ndef download_data():\n    pass\ndownload_data()\n";
    std::string reply = "Here you go:\n```python\n" + body + "```\nenjoy";
    auto program = extract_program(reply, contract);
    CHECK(program.source_text == body);
    CHECK(program.entry_function == "download_data");
    CHECK(reply.substr(program.extraction_span.begin,
                       program.extraction_span.end - program.extraction_span.begin) == body);
}

TEST_CASE("extract_program appends the missing final invocation") {
    ReplyContract contract{"download_data"};
    auto program = extract_program(
        "```python\ndef download_data():\n    return 1\n```", contract);
    CHECK(program.source_text ==
          "def download_data():\n    return 1\ndownload_data()\n");
}

TEST_CASE("extract_program picks the first fence that defines the entry function") {
    ReplyContract contract{"download_data"};
    auto program = extract_program("```\nhelper = 1\n```\nand then\n"
                                   "```python\ndef download_data():\n    pass\n"
                                   "download_data()\n```\n"
                                   "```python\ndef download_data():\n    pass  # later\n"
                                   "download_data()\n```",
                                   contract);
    CHECK(program.source_text.find("# later") == std::string::npos);
    CHECK(program.source_text.find("def download_data():") != std::string::npos);
}

TEST_CASE("extract_program accepts fences without a language tag") {
    ReplyContract contract{"download_data"};
    auto program =
        extract_program("```\ndef download_data():\n    pass\ndownload_data()\n```", contract);
    CHECK(program.source_text.find("def download_data()") != std::string::npos);
}

TEST_CASE("extract_program error taxonomy") {
    ReplyContract contract{"download_data"};
    CHECK_THROWS_AS(extract_program("no code at all", contract), NoCodeBlock);
    CHECK_THROWS_AS(extract_program("```python\nprint('hi')\n```", contract),
                    MissingEntryFunction);
    // An unclosed fence is not a block.
    CHECK_THROWS_AS(extract_program("```python\ndef download_data(): pass", contract),
                    NoCodeBlock);
}

TEST_CASE("extract_program is idempotent") {
    ReplyContract contract{"download_data"};
    std::vector<std::string> replies = {
        "```python\ndef download_data():\n    x = 1\n```",
        "```python\n# comment first\ndef download_data():\n    x = 1\ndownload_data()\n```",
        "```\ndef download_data():\n    pass\nresult = download_data()\n```",
    };
    auto reg = load_registry(ts::fixture_dir() / "registry");
    replies.push_back("```python\n" + reg.handbook("OpenStreetMap").template_program + "```");
    for (const auto& reply : replies) {
        auto first = extract_program(reply, contract);
        auto again = extract_program("```python\n" + first.source_text + "```", contract);
        CHECK(again.source_text == first.source_text);
    }
}

TEST_CASE("no prompt builder output contains a stored secret") {
    SecretStore store;
    store.add({"OpenWeather", "api_key", "hunter2-the-secret", {}});
    auto reg = fixture_registry();
    auto selection = build_selection_prompt("get weather for Cairo", render_index(reg));
    auto fetch = build_fetch_prompt("get weather for Cairo", "OpenWeather",
                                    reg.handbook("OpenWeather"));
    GeneratedProgram program;
    program.entry_function = "download_data";
    program.source_text = "def download_data():\n    key = '{{KEY:OpenWeather:api_key}}'\n";
    auto debug = build_debug_prompt("get weather", reg.handbook("OpenWeather"), program,
                                    "KeyError: appid");
    for (const auto* text : {&selection.full_text, &fetch.full_text, &debug.full_text}) {
        CHECK(text->find("hunter2-the-secret") == std::string::npos);
    }
    CHECK(fetch.full_text.find("{{KEY:OpenWeather:api_key}}") != std::string::npos);
}
