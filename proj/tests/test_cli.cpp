#include "doctest.h"
#include "reenact/io.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "reenact_test_cli";

const char* kTinyConfig = R"({"seed": 3,
 "data": {"image_size": 16, "train_identities": 20, "poses_per_identity": 4, "val_identities": 4,
          "test_identities": 4, "videos": 1, "video_frames": 5},
 "diffae": {"image_size": 16, "code_dim": 8, "channels": [8, 16], "encoder_channels": [8, 16], "groups": 4,
            "time_dim": 16, "t_max": 100},
 "diffae_train": {"steps": 10, "batch_size": 4},
 "oracles": {"steps": 10, "batch_size": 8, "channels": [8, 16], "perceptual_channels": [8, 8],
             "max_pose_error": 1000, "min_identity_gap": -10, "max_nme": 1000},
 "train": {"steps_pretrain": 2, "batch_pretrain": 4, "steps_main": 2, "batch_main": 2, "steps_finetune": 2,
           "batch_finetune": 2, "t_tr": 2, "checkpoint_interval": 2, "val_pairs": 2},
 "inference": {"t_xt": 4, "t": 2},
 "eval": {"pairs": 4, "t_list": [2, 3], "t_xt_list": [2, 4], "grid_items": 2}})";

int run(const std::string& args)
{
    const std::string cmd = "cd " + kDir.string() + " && REENACT_OUTPUT_ROOT=" + (kDir / "runs").string() + " " +
                            REENACT_CLI + " -c tiny.json " + args + " > last.out 2> last.err";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string last_output() { return reenact::read_file(kDir / "last.out"); }
std::string last_error() { return reenact::read_file(kDir / "last.err"); }

struct Workspace
{
    Workspace()
    {
        fs::remove_all(kDir);
        fs::create_directories(kDir);
        std::ofstream(kDir / "tiny.json") << kTinyConfig;
    }
    ~Workspace() { fs::remove_all(kDir); }
};

} // namespace

TEST_CASE("command line workflow")
{
    Workspace w;
    REQUIRE(run("gen-data") == 0);
    const std::string first = last_output();
    CHECK(first.find("identities train 20 val 4 test 4") != std::string::npos);
    REQUIRE(run("gen-data") == 0);
    CHECK(last_output() == first);
    const fs::path data = kDir / "runs" / "data";
    CHECK(fs::exists(data / "test" / "video_0" / "frame_4.png"));

    SUBCASE("errors are categorised")
    {
        CHECK(run("train --stage finetune") == 2);
        CHECK(last_error().find("run: train --stage main") != std::string::npos);
        CHECK(run("train --stage warmup") == 2);
        CHECK(run("train --stage main --ablate no-everything") == 2);
        std::ofstream(kDir / "typo.json") << R"({"loss": {"lambda_pixx": 1}})";
        const std::string cmd = "cd " + kDir.string() + " && " + REENACT_CLI + " -c typo.json gen-data 2> /dev/null";
        const int status = std::system(cmd.c_str());
        CHECK(WEXITSTATUS(status) == 2);
        std::ofstream(kDir / "bogus.png") << "not an image";
        CHECK(run("train --stage all") == 0);
        CHECK(run("reenact --source bogus.png --driving bogus.png") == 3);
        CHECK(run("reenact --source " + (data / "test" / "self_0_source.png").string()) == 2);
    }

    SUBCASE("train, reenact, evaluate and ablate")
    {
        REQUIRE(run("train --stage all") == 0);
        CHECK(last_output().find("full/finetune.ckpt") != std::string::npos);
        REQUIRE(run("train --stage main --ablate no-pretrain") == 0);
        CHECK(fs::exists(kDir / "runs" / "wo_pretrain" / "main.ckpt"));
        CHECK(fs::exists(kDir / "runs" / "full" / "manifest.json"));

        const std::string source = "--source " + (data / "test" / "self_0_source.png").string();
        REQUIRE(run("reenact " + source + " --driving-video " + (data / "test" / "video_0").string() + " --out a") == 0);
        REQUIRE(run("reenact " + source + " --driving-video " + (data / "test" / "video_0").string() + " --out b") == 0);
        for (int k = 0; k < 5; ++k) {
            const std::string name = "frame_000" + std::to_string(k) + ".png";
            REQUIRE(fs::exists(kDir / "a" / name));
            CHECK(reenact::read_file(kDir / "a" / name) == reenact::read_file(kDir / "b" / name));
        }
        CHECK(!fs::exists(kDir / "a" / "frame_0005.png"));
        CHECK(fs::exists(kDir / "a" / "grid.png"));
        const auto manifest = nlohmann::json::parse(reenact::read_file(kDir / "a" / "manifest.json"));
        CHECK(manifest["lineage"]["frames"] == 5);

        std::ofstream(kDir / "drive.json") << R"([{"pose": [10, 0, 0]}, {"pose": [-10, 5, 0], "gaze": [0.1, 0.2]}])";
        REQUIRE(run("reenact " + source + " --driving-params drive.json --out c") == 0);
        CHECK(fs::exists(kDir / "c" / "frame_0001.png"));

        REQUIRE(run("eval --cross-pairs 2 --videos") == 0);
        const std::string table = reenact::read_file(kDir / "runs" / "eval" / "eval.tsv");
        CHECK(table.rfind("kind\tindex\tpsnr\tssim\tl1\tcsim\tperceptual_proxy\tnme\tapd\taed\n", 0) == 0);
        CHECK(table.find("self\tmean") != std::string::npos);
        CHECK(table.find("cross\tmean") != std::string::npos);
        CHECK(table.find("video\tmean") != std::string::npos);
        const std::string jsonl = reenact::read_file(kDir / "runs" / "eval" / "eval.jsonl");
        CHECK(jsonl.find("\"temporal\"") != std::string::npos);
        REQUIRE(run("eval --cross-pairs 2 --videos --out again") == 0);
        CHECK(reenact::read_file(kDir / "again" / "eval.tsv") == table);

        REQUIRE(run("ablate") == 0);
        const std::string steps = reenact::read_file(kDir / "runs" / "ablate" / "steps.tsv");
        int rows = 0;
        for (char ch : steps) rows += ch == '\n';
        CHECK(rows == 1 + 2 * 2 + 1);
        for (const std::string row : {"\n2\t2\t", "\n2\t4\t", "\n3\t2\t", "\n3\t4\t", "\n2\trandom\t"}) {
            CHECK(steps.find(row) != std::string::npos);
        }
    }
}
