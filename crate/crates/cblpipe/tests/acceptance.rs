//! End-to-end acceptance checks, one test per criterion.
//!
//! Each test writes a single `PASS`/`FAIL` line straight to stderr, so the
//! lines show up even when libtest captures output:
//!
//! ```text
//! cargo test -p cblpipe --test acceptance
//! ```

mod support;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cblpipe::bench::{run_bench, BenchConfig, SimulatedInstall};
use cblpipe::engine::Stage;
use cblpipe::image::verify_tools;
use cblpipe::platform::{effective_environment, BackendKind, MemorySink, Reporter};
use cblpipe::shell::{shared_secrets, Executor};
use cblpipe_core::expander::{
    expand, ExpandError, FixedFormatSource, MemoryStore, DEFAULT_MAX_DEPTH,
};
use cblpipe_core::recipe::{
    generate_recipe, lint_recipe, DependencySpec, InstallMethod, PinnedPackage, RecipeText, Rule,
};
use cblpipe_core::report::{Overall, StageStatus};
use cblpipe_core::stats::{compare, compare_means, BenchMode};
use support::oracle::{generate, reference_expand, GeneratedFixture, MAX_BOOKS, MAX_DEPTH};
use support::{github_env, run_pipeline, secret_env, Workspace, API_TOKEN, MF_PASSWORD};

/// Relative tolerance on benchmark means.
const BENCH_TOLERANCE: f64 = 0.15;
/// Absolute tolerance, in percentage points, on the measured reduction.
const REDUCTION_TOLERANCE_PTS: f64 = 5.0;
/// Absolute tolerance on the reduction computed from fixed means.
const FIXED_REDUCTION_TOLERANCE_PTS: f64 = 0.2;
const EXPANSION_BUDGET: Duration = Duration::from_secs(5);

fn criterion(id: u8, title: &str, body: impl FnOnce() -> String) {
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let mut err = std::io::stderr().lock();
    match outcome {
        Ok(detail) => {
            let _ = writeln!(err, "PASS [{id}] {title}: {detail}");
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| panic.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            let first = msg.lines().next().unwrap_or_default();
            let _ = writeln!(err, "FAIL [{id}] {title}: {first}");
            drop(err);
            resume_unwind(panic);
        }
    }
}

fn library_expand(f: &GeneratedFixture) -> String {
    let mut store = MemoryStore::new();
    for (name, text) in &f.books {
        store.insert(name, text.clone());
    }
    let src = FixedFormatSource::parse("MAIN.cbl", &f.main).unwrap();
    expand(&src, &store, DEFAULT_MAX_DEPTH).unwrap().to_text()
}

#[test]
fn c1_expansion_matches_reference() {
    criterion(
        1,
        "copybook expansion matches the reference expander",
        || {
            let mut with = Vec::new();
            let mut without = Vec::new();
            let mut seed = 0u64;
            while with.len() < 20 || without.len() < 20 {
                let f = generate(seed, seed.is_multiple_of(2));
                seed += 1;
                if f.uses_replacing && with.len() < 20 {
                    with.push(f);
                } else if !f.uses_replacing && without.len() < 20 {
                    without.push(f);
                }
            }
            let fixtures: Vec<_> = with.into_iter().chain(without).collect();
            let started = Instant::now();
            let got: Vec<String> = fixtures.iter().map(library_expand).collect();
            let elapsed = started.elapsed();
            for (f, got) in fixtures.iter().zip(&got) {
                assert!(f.books.len() <= MAX_BOOKS && f.depth <= MAX_DEPTH);
                let want = reference_expand(&f.main, &f.books);
                assert_eq!(got, &want, "seed {} differs from the reference", f.seed);
            }
            assert!(elapsed < EXPANSION_BUDGET, "expansion took {elapsed:?}");
            let deepest = fixtures.iter().map(|f| f.depth).max().unwrap();
            format!(
                "{} fixtures byte-identical, max depth {deepest}, {elapsed:?}",
                fixtures.len()
            )
        },
    );
}

#[test]
fn c2_cycles_and_missing_books_are_errors() {
    criterion(2, "copy cycles and missing copybooks are reported", || {
        let main = "000100 IDENTIFICATION DIVISION.\n000200     COPY A.\n";
        let src = FixedFormatSource::parse("MAIN.cbl", main).unwrap();

        let mut store = MemoryStore::new();
        store.insert("A", "       COPY B.\n");
        store.insert("B", "       COPY C.\n");
        store.insert("C", "       COPY A.\n");
        match expand(&src, &store, DEFAULT_MAX_DEPTH) {
            Err(ExpandError::CopyCycle { path }) => {
                assert_eq!(path.first(), path.last(), "{path:?}");
                for name in ["A", "B", "C"] {
                    assert!(path.iter().any(|p| p.ends_with(name)), "{path:?}");
                }
            }
            other => panic!("expected a cycle, got {other:?}"),
        }

        let mut store = MemoryStore::new();
        store.insert("A", "       COPY GONE.\n");
        match expand(&src, &store, DEFAULT_MAX_DEPTH) {
            Err(ExpandError::CopybookNotFound { name, requester }) => {
                assert_eq!(name, "GONE");
                assert!(requester.contains('A'), "{requester}");
            }
            other => panic!("expected a missing copybook, got {other:?}"),
        }

        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("books")).unwrap();
        fs::write(dir.path().join("books/A.cpy"), "       COPY B.\n").unwrap();
        fs::write(dir.path().join("books/B.cpy"), "       COPY A.\n").unwrap();
        fs::write(dir.path().join("main.cbl"), main).unwrap();
        let out = Command::new(support::cblpipe_bin())
            .args(["expand", "main.cbl", "--copybook-dir", "books"])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(1));
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("copy cycle"), "{stderr}");
        assert!(!dir.path().join("main.expanded.cbl").exists());
        "cycle path and missing name reported; CLI exits 1".into()
    });
}

fn leaks(text: &str) -> Option<&'static str> {
    [API_TOKEN, MF_PASSWORD]
        .into_iter()
        .find(|s| text.contains(s))
}

#[test]
fn c3_secrets_never_reach_output() {
    criterion(3, "registered secrets never reach any output", || {
        // A passing run echoes the token through the compiler; the failing
        // run also has it in a test expectation that ends up on stderr.
        let ws = Workspace::new();
        let mut transcripts = Vec::new();
        for failing in [false, true] {
            if failing {
                ws.write(
                    "tests/PAYROLL.cut",
                    &format!("EXPECT {API_TOKEN}\nEXPECT {MF_PASSWORD}\n"),
                );
            }
            let json = ws.path().join("report.json");
            let out = Command::new(support::cblpipe_bin())
                .args(["run", "--config"])
                .arg(ws.config_path())
                .arg("--json")
                .arg(&json)
                .env_clear()
                .env("PATH", std::env::var("PATH").unwrap_or_default())
                .envs(secret_env())
                .output()
                .unwrap();
            assert_eq!(out.status.code(), Some(if failing { 1 } else { 0 }));
            let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
            let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
            assert!(stdout.contains("--auth ***"), "{stdout}");
            transcripts.push(stdout);
            transcripts.push(stderr);
            transcripts.push(fs::read_to_string(&json).unwrap());
        }
        for t in &transcripts {
            assert_eq!(leaks(t), None, "secret leaked in:\n{t}");
        }

        let mut config = ProptestConfig::with_cases(1000);
        config.failure_persistence = None;
        let mut runner = proptest::test_runner::TestRunner::new(config);
        let strategy = (
            prop::collection::vec("[a-zA-Z0-9!@#%^&*_-]{4,16}", 1..4),
            prop::collection::vec("[ -~]{0,12}", 1..6),
        );
        runner
            .run(&strategy, |(secrets, fillers)| {
                let store = shared_secrets();
                let mut registered = Vec::new();
                for s in &secrets {
                    if store.write().unwrap().register(s).is_ok() {
                        registered.push(s.clone());
                    }
                }
                let mut message = String::new();
                for (i, filler) in fillers.iter().enumerate() {
                    message.push_str(filler);
                    message.push_str(&secrets[i % secrets.len()]);
                }
                let out = MemorySink::new();
                let err = MemorySink::new();
                let mut r = Reporter::new(out.clone(), err.clone(), store);
                r.info(message.clone());
                r.unstable(message.clone());
                let _ = r.error(message.clone());
                r.print(&message);
                r.eprint(&message);
                let all = format!("{}{}", out.contents(), err.contents());
                for s in &registered {
                    prop_assert!(!all.contains(s.as_str()), "{s:?} leaked in {all:?}");
                }
                Ok(())
            })
            .unwrap();
        format!(
            "{} run transcripts clean; 1000 random reporter cases clean",
            transcripts.len()
        )
    });
}

#[test]
fn c4_backends_produce_identical_runs() {
    criterion(
        4,
        "local, GitHub and env-file backends produce the same run",
        || {
            let ws = Workspace::new();
            let local = run_pipeline(ws.config(), BackendKind::Local, secret_env(), None);
            let github = run_pipeline(
                ws.config(),
                BackendKind::GithubActions,
                github_env(&ws),
                None,
            );

            let env_file = ws.path().join("ci.env");
            fs::write(
                &env_file,
                format!(
                    "CBL_COMMIT_SHA={}\nCBL_REPOSITORY=local/{}\nCBL_BRANCH={}\n",
                    ws.head(),
                    ws.dir_name(),
                    ws.branch()
                ),
            )
            .unwrap();
            let mut env = secret_env();
            env.insert("CBL_ENV_FILE".into(), env_file.display().to_string());
            let env = effective_environment(BackendKind::EnvFile, &env).unwrap();
            let file = run_pipeline(ws.config(), BackendKind::EnvFile, env, None);

            let shape = |o: &support::RunOutcome| {
                let r = o.report();
                let meta = r.metadata.as_ref().expect("metadata");
                (
                    r.overall,
                    r.stages
                        .iter()
                        .map(|s| (s.stage_name.clone(), s.status, s.transcript.clone()))
                        .collect::<Vec<_>>(),
                    (
                        meta.commit_ref.clone(),
                        meta.repository_id.clone(),
                        meta.branch.clone(),
                    ),
                    o.stdout.clone(),
                    o.stderr.clone(),
                )
            };
            let base = shape(&local);
            assert_eq!(base.0, Overall::Passed, "{}", local.stdout);
            assert_eq!(base.2 .0, ws.head());
            assert_eq!(shape(&github), base, "github differs from local");
            assert_eq!(shape(&file), base, "env-file differs from local");
            format!(
                "3 backends, {} stdout lines identical",
                local.stdout.lines().count()
            )
        },
    );
}

#[test]
fn c5_every_session_is_closed() {
    criterion(
        5,
        "mainframe session and scratch are released on every path",
        || {
            let mut seen = Vec::new();
            for case in ["all-pass", "test-failure", "stage-3-fault"] {
                let ws = Workspace::new();
                let fault = (case == "stage-3-fault").then_some(Stage::UnitTest);
                if case == "test-failure" {
                    ws.write(
                        "tests/INTCALC.cut",
                        "EXPECT THIS TEXT IS NOT IN THE SOURCE\n",
                    );
                }
                let o = run_pipeline(ws.config(), BackendKind::Local, secret_env(), fault);
                match case {
                    "all-pass" => assert_eq!(o.report().overall, Overall::Passed, "{}", o.stdout),
                    "test-failure" => {
                        let r = o.report();
                        assert_eq!(r.overall, Overall::Failed);
                        let unit = r
                            .stages
                            .iter()
                            .find(|s| s.stage_name == "unit-test")
                            .unwrap();
                        assert_eq!(unit.status, StageStatus::Failed);
                    }
                    _ => assert_eq!(o.result.as_ref().err().map(|e| e.exit_code()), Some(3)),
                }
                assert_eq!((o.sessions_opened, o.sessions_closed), (1, 1), "{case}");
                assert_eq!(o.cleanup_runs, 1, "{case}");
                assert!(
                    !ws.path().join(".cblpipe").exists(),
                    "{case}: scratch left behind"
                );
                seen.push(case);
            }
            format!(
                "{} paths: 1 session opened and closed, scratch removed",
                seen.len()
            )
        },
    );
}

#[test]
fn c6_prebuilt_image_cuts_runtime() {
    criterion(
        6,
        "prebuilt image removes the install cost from every run",
        || {
            // Six mainframe round trips at 333 ms put the base pipeline near 2 s.
            let ws = Workspace::new();
            ws.edit_config(|t| t.replace("latency_ms: 0", "latency_ms: 333"));
            let installs = ["gnucobol", "cobol-check", "zowe-cli"]
                .map(|n| SimulatedInstall::new(n, 1000))
                .to_vec();
            let cfg = |mode| BenchConfig {
                mode,
                iterations: 5,
                simulated_install: installs.clone(),
                pipeline: ws.config(),
                backend: BackendKind::Local,
                env: secret_env(),
                scratch: None,
            };
            let runtime = run_bench(&cfg(BenchMode::RuntimeInstall)).unwrap();
            let prebuilt = run_bench(&cfg(BenchMode::Prebuilt)).unwrap();
            assert_eq!((runtime.iterations, prebuilt.iterations), (5, 5));

            let within = |got: f64, want: f64| (got - want).abs() <= want * BENCH_TOLERANCE;
            assert!(
                within(prebuilt.mean_ms, 2000.0),
                "prebuilt mean {:.0} ms",
                prebuilt.mean_ms
            );
            assert!(
                within(runtime.mean_ms, 5000.0),
                "runtime-install mean {:.0} ms",
                runtime.mean_ms
            );

            let measured = compare(&runtime, &prebuilt).unwrap();
            assert!(
                (measured.reduction_pct - 60.0).abs() <= REDUCTION_TOLERANCE_PTS,
                "measured reduction {measured}"
            );
            let fixed = compare_means(724.0, 130.0).unwrap();
            assert!(
                (fixed.rounded_pct() - 82.0).abs() <= FIXED_REDUCTION_TOLERANCE_PTS,
                "{fixed}"
            );
            format!(
            "runtime-install {:.2} s, prebuilt {:.2} s, {:.1}% reduction; 724 s -> 130 s is {:.1}%",
            runtime.mean_ms / 1000.0,
            prebuilt.mean_ms / 1000.0,
            measured.reduction_pct,
            fixed.rounded_pct()
        )
        },
    );
}

fn random_deps(rng: &mut ChaCha8Rng) -> Vec<DependencySpec> {
    let mut names = vec![
        "gnucobol",
        "groovy",
        "openjdk17",
        "git",
        "bash",
        "curl",
        "zowe-cli",
        "cobol-check",
        "python3",
        "jq",
    ];
    names.shuffle(rng);
    let n = rng.gen_range(1..=names.len());
    names[..n]
        .iter()
        .map(|name| {
            let version = format!(
                "{}.{}.{}-r{}",
                rng.gen_range(0..10),
                rng.gen_range(0..30),
                rng.gen_range(0..9),
                rng.gen_range(0..4)
            );
            let install = *[InstallMethod::Apk, InstallMethod::Npm, InstallMethod::Base]
                .choose(rng)
                .unwrap();
            let build_deps = (0..rng.gen_range(0..3))
                .map(|_| PinnedPackage {
                    name: ["make", "g++", "python3-dev", "musl-dev"]
                        .choose(rng)
                        .unwrap()
                        .to_string(),
                    version: format!("{}.{}-r0", rng.gen_range(1..14), rng.gen_range(0..5)),
                })
                .collect();
            DependencySpec {
                name: name.to_string(),
                version: if install == InstallMethod::Npm {
                    version.replace("-r", ".")
                } else {
                    version.clone()
                },
                version_cmd: vec![name.to_string(), "--version".into()],
                expected_pattern: version,
                install,
                package: None,
                build_deps,
            }
        })
        .collect()
}

#[test]
fn c7_generated_recipes_lint_clean() {
    criterion(
        7,
        "generated recipes are lint-clean and each rule fires alone",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            for round in 0..10 {
                let deps = random_deps(&mut rng);
                let recipe = generate_recipe(&deps, "alpine:3.20.3").unwrap();
                let findings = lint_recipe(&recipe).unwrap();
                assert!(
                    findings.is_empty(),
                    "round {round}: {findings:?}\n{}",
                    recipe.render()
                );
            }

            let fixtures: [(&str, Rule, Option<u8>); 6] = [
            ("FROM debian:12.7-slim\n", Rule::R1, Some(2)),
            ("FROM alpine:3.20.3\nRUN apk add bash=5.2.26-r0\n", Rule::R2, Some(6)),
            ("FROM alpine:3.20.3\nRUN echo a\nRUN echo b\nRUN echo c\n", Rule::R3, Some(5)),
            (
                "FROM alpine:3.20.3\nRUN apk add --no-cache --virtual .build-deps gcc=13.2.1-r0\n",
                Rule::R4,
                Some(7),
            ),
            ("FROM node:20.15.1-alpine3.20\nRUN npm install -g @zowe/cli@8.1.2\n", Rule::R5, Some(11)),
            ("FROM alpine:3.20.3\nRUN apk add --no-cache bash\n", Rule::R6, None),
        ];
            for (text, rule, step) in fixtures {
                let findings = lint_recipe(&RecipeText::parse(text).unwrap()).unwrap();
                assert_eq!(findings.len(), 1, "{rule}: {findings:?}");
                assert_eq!(
                    (findings[0].rule_id, findings[0].reduction_step),
                    (rule, step)
                );
            }

            let dir = tempfile::tempdir().unwrap();
            fs::write(dir.path().join("Containerfile"), fixtures[0].0).unwrap();
            let out = Command::new(support::cblpipe_bin())
                .args(["lint-recipe", "Containerfile"])
                .current_dir(dir.path())
                .output()
                .unwrap();
            assert_eq!(out.status.code(), Some(1));
            let stdout = String::from_utf8_lossy(&out.stdout);
            assert!(stdout.contains("Containerfile: line 1: R1"), "{stdout}");
            assert!(stdout.contains("size-reduction step 2"), "{stdout}");
            "10 random dependency lists clean; R1-R6 each fire alone with their step".into()
        },
    );
}

fn fake_tool(dir: &Path, name: &str, output: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, format!("#!/bin/sh\necho '{output}'\n")).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    }
    path.display().to_string()
}

#[test]
fn c8_missing_tool_fails_verification() {
    criterion(8, "image verification fails when a tool is missing", || {
        let dir = tempfile::tempdir().unwrap();
        let tools = [
            ("cobc", "cobc (GnuCOBOL) 3.2.0", "3.2.0"),
            ("cobolcheck", "cobol-check 0.2.8", "0.2.8"),
            ("zowe", "8.1.0", "8.1.0"),
        ];
        let deps: Vec<DependencySpec> = tools
            .iter()
            .map(|(name, output, version)| DependencySpec {
                name: name.to_string(),
                version: version.to_string(),
                version_cmd: vec![fake_tool(dir.path(), name, output), "--version".into()],
                expected_pattern: version.to_string(),
                install: InstallMethod::Apk,
                package: None,
                build_deps: vec![],
            })
            .collect();
        let executor = Executor::new();
        let full = verify_tools(&deps, &executor, dir.path());
        assert!(full.passed, "{}", full.render_text());

        fs::remove_file(dir.path().join("cobolcheck")).unwrap();
        let report = verify_tools(&deps, &executor, dir.path());
        assert!(!report.passed);
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(failed, ["cobolcheck"]);

        let yaml = serde_yaml::to_string(&deps).unwrap();
        fs::write(dir.path().join("deps.yaml"), yaml).unwrap();
        let out = Command::new(support::cblpipe_bin())
            .args(["verify-image", "--deps", "deps.yaml"])
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(1));
        format!(
            "{} of {} checks pass after removal; CLI exits 1",
            tools.len() - 1,
            tools.len()
        )
    });
}

#[test]
fn c9_emitted_workflow_is_complete() {
    criterion(
        9,
        "emitted workflow is valid and carries every requirement",
        || {
            let ws = Workspace::new();
            let out_path = ws.path().join("workflow.yml");
            let out = Command::new(support::cblpipe_bin())
                .args([
                    "gen-workflow",
                    "--config",
                    "pipeline.yaml",
                    "--out",
                    "workflow.yml",
                ])
                .current_dir(ws.path())
                .output()
                .unwrap();
            assert_eq!(
                out.status.code(),
                Some(0),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );
            let text = fs::read_to_string(&out_path).unwrap();
            let doc: serde_yaml::Value = serde_yaml::from_str(&text).unwrap();
            let job = &doc["jobs"]["pipeline"];

            let container = &job["container"];
            assert!(container["image"].as_str().is_some_and(|i| !i.is_empty()));
            for key in ["username", "password"] {
                let v = container["credentials"][key].as_str().unwrap_or_default();
                assert!(v.contains("secrets."), "registry {key}: {v:?}");
            }

            let cfg = ws.config();
            let expected: usize = cfg.secrets.len() + usize::from(cfg.mainframe.is_some());
            let env: BTreeMap<String, String> = serde_yaml::from_value(job["env"].clone()).unwrap();
            let secret_entries = env.values().filter(|v| v.contains("${{ secrets.")).count();
            assert_eq!(secret_entries, expected, "{env:?}");
            assert!(env.contains_key("MF_PASSWORD") && env.contains_key("CBL_API_TOKEN"));

            let steps = job["steps"].as_sequence().unwrap();
            let uses: Vec<&str> = steps.iter().filter_map(|s| s["uses"].as_str()).collect();
            let checkout = uses
                .iter()
                .find(|u| u.starts_with("actions/checkout@"))
                .expect("checkout step");
            let sha = checkout.trim_start_matches("actions/checkout@");
            assert!(
                sha.len() == 40 && sha.chars().all(|c| c.is_ascii_hexdigit()),
                "{checkout}"
            );

            let runs: Vec<&str> = steps.iter().filter_map(|s| s["run"].as_str()).collect();
            assert!(
                runs.iter().any(|r| r.contains("safe.directory")),
                "{runs:?}"
            );
            let cleanup = steps
                .iter()
                .find(|s| s["run"].as_str().is_some_and(|r| r.starts_with("rm -rf")))
                .expect("cleanup step");
            assert!(cleanup["if"]
                .as_str()
                .is_some_and(|c| c.contains("failure()")));
            assert_eq!(leaks(&text), None);
            format!(
                "{} steps, {secret_entries} secret entries, checkout pinned to {}",
                steps.len(),
                &sha[..7]
            )
        },
    );
}
