#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>

#include "cirsynth/fixtures.hpp"
#include "cirsynth/records.hpp"
#include "cirsynth/run_config.hpp"
#include "test_support.hpp"

using namespace cirsynth;
using nlohmann::json;

namespace {

void write(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("jsonl round trip with header") {
    testing::TempDir dir("jsonl");
    const auto p = dir / "a.jsonl";
    write_jsonl(p, {formats::kPairs, kArtifactVersion, "h1"}, {json{{"x", 1}}, json{{"x", 2}}});
    const auto f = read_jsonl(p, formats::kPairs);
    REQUIRE(f.header);
    CHECK(f.header->config_hash == "h1");
    CHECK(f.records.size() == 2);
    CHECK(f.records[1]["x"] == 2);
    CHECK(!std::filesystem::exists(dir / "a.jsonl.tmp"));

    CHECK_THROWS_CODE(read_jsonl(p, formats::kTriplets), ErrorCode::VersionMismatch);
    write_jsonl(p, {formats::kPairs, 2, "h1"}, {});
    CHECK_THROWS_CODE(read_jsonl(p, formats::kPairs), ErrorCode::VersionMismatch);

    write(p, "{\"x\":1}\n");
    CHECK_THROWS_CODE(read_jsonl(p, formats::kPairs), ErrorCode::MalformedRecord);
    CHECK(read_jsonl(p, formats::kPairs, false).records.size() == 1);

    write(p, "{\"format\":\"cirsynth.pairs\",\"version\":1,\"config_hash\":\"\"}\n\n{\"x\":1}\n{oops\n");
    const auto msg = message_of([&] { (void)read_jsonl(p, formats::kPairs); });
    CHECK(msg.find("MalformedRecord") == 0);
    CHECK(msg.find("a.jsonl:4") != std::string::npos);

    const auto missing = message_of([&] { (void)read_jsonl(dir / "nope.jsonl", formats::kPairs); });
    CHECK(missing.find("MissingInput") == 0);
    CHECK(missing.find("nope.jsonl") != std::string::npos);
}

TEST_CASE("record conversions round trip") {
    const MinedPair p{{"a", "b"}, "a"};
    CHECK(pair_from_record(to_record(p)) == p);
    CHECK_THROWS_CODE(pair_from_record(json{{"reference_id", "a"}, {"target_id", "a"}}), ErrorCode::MalformedRecord);
    CHECK_THROWS_CODE(pair_from_record(json{{"reference_id", "a"}}), ErrorCode::MalformedRecord);

    SyntheticTriplet t{"a", "b", "cat", "dog", "make it a dog", std::nullopt, TripletStatus::Unfiltered};
    CHECK(triplet_from_record(to_record(t)) == t);
    CHECK(to_record(t)["filter_score"].is_null());
    t.filter_score = 0.75;
    t.status = TripletStatus::Kept;
    CHECK(triplet_from_record(to_record(t)) == t);
    auto bad = to_record(t);
    bad["status"] = "weird";
    CHECK_THROWS_CODE(triplet_from_record(bad), ErrorCode::MalformedRecord);

    QueryRecord q{"r", "x", {"g1", "g2"}, std::vector<ImageId>{"r", "g1"}};
    const auto back = query_from_record(to_record(q));
    CHECK(back.reference_id == "r");
    CHECK(back.ground_truth_ids == q.ground_truth_ids);
    CHECK(back.subset_ids == q.subset_ids);
    auto bq = to_record(q);
    bq["ground_truth_ids"] = json::array({"r"});
    CHECK_THROWS_CODE(query_from_record(bq), ErrorCode::MalformedRecord);

    const LossRecord l{7, {0.5, 0.25, 0.75}};
    const auto lb = loss_from_record(to_record(l));
    CHECK(lb.step == 7);
    CHECK(lb.losses.l_hybrid == 0.75);
}

TEST_CASE("embedding files") {
    testing::TempDir dir("emb");
    ImageStore images{{"x", EmbeddingVector({1.0, 2.0})}, {"y", EmbeddingVector({0.0, -1.0})}};
    save_embeddings(dir / "e.jsonl", images, "h");
    CHECK(load_embeddings(dir / "e.jsonl") == images);

    write(dir / "plain.jsonl", "{\"image_id\":\"x\",\"embedding\":[1,2]}\n{\"image_id\":5,\"embedding\":[3,4]}\n");
    const auto plain = load_embeddings(dir / "plain.jsonl");
    CHECK(plain.count("5") == 1);

    write(dir / "dup.jsonl", "{\"image_id\":\"x\",\"embedding\":[1,2]}\n{\"image_id\":\"x\",\"embedding\":[3,4]}\n");
    CHECK_THROWS_CODE(load_embeddings(dir / "dup.jsonl"), ErrorCode::MalformedRecord);
    write(dir / "dim.jsonl", "{\"image_id\":\"x\",\"embedding\":[1,2]}\n{\"image_id\":\"y\",\"embedding\":[3]}\n");
    CHECK_THROWS_CODE(load_embeddings(dir / "dim.jsonl"), ErrorCode::DimMismatch);
    write(dir / "text.jsonl", "{\"image_id\":\"x\",\"embedding\":\"1,2\"}\n");
    CHECK_THROWS_CODE(load_embeddings(dir / "text.jsonl"), ErrorCode::MalformedRecord);
}

TEST_CASE("benchmark annotation adapters") {
    testing::TempDir dir("adapters");
    write(dir / "cirr.json", R"([{"pairid": 1, "reference": "dev-1", "target_hard": "dev-2",
        "caption": "make it red", "img_set": {"id": 3, "members": ["dev-1", "dev-2", "dev-3"]}}])");
    const auto cirr = load_query_dataset(dir / "cirr.json", "cirr");
    REQUIRE(cirr.size() == 1);
    CHECK(cirr[0].reference_id == "dev-1");
    CHECK(cirr[0].ground_truth_ids == std::set<ImageId>{"dev-2"});
    CHECK(cirr[0].subset_ids->size() == 3);

    write(dir / "circo.json", R"([{"id": 0, "reference_img_id": 12, "target_img_id": 40,
        "relative_caption": "is on a beach", "gt_img_ids": [40, 41, 42]}])");
    const auto circo = load_query_dataset(dir / "circo.json", "circo");
    CHECK(circo[0].reference_id == "12");
    CHECK(circo[0].ground_truth_ids == std::set<ImageId>{"40", "41", "42"});
    CHECK(!circo[0].subset_ids);

    write(dir / "fiq.json", R"([{"candidate": "B001", "target": "B002",
        "captions": ["is darker", "has long sleeves"]}])");
    const auto fiq = load_query_dataset(dir / "fiq.json", "fashioniq");
    CHECK(fiq[0].query_text == "is darker and has long sleeves");

    write(dir / "bad.json", R"([{"candidate": "B001", "target": "B001", "captions": ["x"]}])");
    CHECK_THROWS_CODE(load_fashioniq(dir / "bad.json"), ErrorCode::MalformedRecord);
    write(dir / "obj.json", R"({"not": "an array"})");
    CHECK_THROWS_CODE(load_cirr(dir / "obj.json"), ErrorCode::MalformedRecord);
    CHECK_THROWS_CODE(load_query_dataset(dir / "cirr.json", "coco"), ErrorCode::InvalidConfig);
}

TEST_CASE("config defaults validate and round trip") {
    const RunConfig c;
    CHECK_NOTHROW(c.validate());
    const auto back = RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(c.hash().size() == 64);
    CHECK(c.cache_dir() == std::filesystem::path("out") / "cache");
    CHECK(back.train.seed == back.stage_seed("train"));
    CHECK(c.stage_seed("train") != c.stage_seed("mapping"));
}

TEST_CASE("config layering: defaults, file, overrides") {
    testing::TempDir dir("cfg");
    write(dir / "c.json", R"({"seed": 9, "train": {"steps": 50, "learning_rate": 0.01}})");
    const auto c = resolve_config(dir / "c.json", {{"train.steps", "70"}, {"/eval/k_values", "1,3"}});
    CHECK(c.seed == 9);
    CHECK(c.train.steps == 70);
    CHECK(c.train.learning_rate == 0.01);
    CHECK(c.eval.k_values == std::vector<std::size_t>{1, 3});
    CHECK(c.train.seed == c.stage_seed("train"));

    CHECK(resolve_config(std::nullopt, {{"workers", "2"}}).workers == 2);
    CHECK_THROWS_CODE(resolve_config(std::nullopt, {{"providers.mock", "false"}}), ErrorCode::InvalidConfig);
    CHECK(resolve_config(std::nullopt, {{"filter.similarity_threshold", "0.5"}}).filter.similarity_threshold == 0.5);
    CHECK(resolve_config(std::nullopt, {{"train.prompt.prefix", "an image of"}}).eval.prompt.prefix == "an image of");

    CHECK_THROWS_CODE(resolve_config(std::nullopt, {{"train.nope", "1"}}), ErrorCode::InvalidConfig);
    CHECK_THROWS_CODE(resolve_config(std::nullopt, {{"train.steps", "many"}}), ErrorCode::InvalidConfig);
    CHECK_THROWS_CODE(resolve_config(std::nullopt, {{"filter.similarity_threshold", "2"}}), ErrorCode::InvalidConfig);
    write(dir / "bad.json", R"({"trian": {}})");
    CHECK_THROWS_CODE(resolve_config(dir / "bad.json", {}), ErrorCode::InvalidConfig);
    write(dir / "arr.json", "[1]");
    CHECK_THROWS_CODE(resolve_config(dir / "arr.json", {}), ErrorCode::InvalidConfig);
    CHECK(dotted_to_pointer("train.steps") == "/train/steps");
}

TEST_CASE("config hash ignores paths and worker count only") {
    const RunConfig base;
    auto c = base;
    c.paths.out_dir = "elsewhere";
    c.paths.embeddings = "x.jsonl";
    c.workers = 17;
    CHECK(c.hash() == base.hash());
    c.train.steps += 1;
    CHECK(c.hash() != base.hash());
    c = base;
    c.seed = 1;
    CHECK(c.hash() != base.hash());
}

TEST_CASE("cluster fixture geometry") {
    const auto f = make_cluster_fixture();
    CHECK(f.images.size() == 120);
    CHECK(f.queries.size() == 20);
    for (const auto& [a, va] : f.images) {
        for (const auto& [b, vb] : f.images) {
            if (a >= b) continue;
            const double d = cosine_distance(l2_normalize(va), l2_normalize(vb));
            if (f.cluster_of.at(a) == f.cluster_of.at(b)) {
                CHECK(d > 0.002);
                CHECK(d < 0.94);
            } else {
                CHECK(d > 0.94);
            }
        }
    }
    for (const auto& q : f.queries) CHECK_NOTHROW(q.validate());
    ClusterFixtureConfig tight;
    tight.dim = 10;
    CHECK_THROWS_CODE(make_cluster_fixture(tight), ErrorCode::InvalidConfig);
}
