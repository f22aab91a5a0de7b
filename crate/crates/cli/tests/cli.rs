use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slidebench"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// P6 image with a textured tissue-coloured left half and a white right half.
fn write_slide(path: &Path, w: usize, h: usize) {
    let mut data = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            if x < w / 2 {
                let v = ((x * 7 + y * 13) % 40) as u8;
                data.extend_from_slice(&[180 + v, 90 + v, 150 + v / 2]);
            } else {
                data.extend_from_slice(&[250, 250, 250]);
            }
        }
    }
    std::fs::write(path, data).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn compress_decompress_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.ppm");
    let pbc = dir.path().join("a.pbc");
    let back = dir.path().join("b.ppm");
    write_slide(&img, 64, 64);

    let o = run(&["compress", p(&img), p(&pbc), "--quality", "80"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("bpp"));
    let o = run(&["decompress", p(&pbc), p(&back)]);
    assert_eq!(code(&o), 0);

    let o = run(&["evaluate", p(&img), p(&back), "--metrics", "psnr"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let psnr = v["psnr"].as_f64().unwrap();
    assert!(psnr > 30.0 && psnr < 100.0, "{psnr}");

    let o = run(&["evaluate", p(&img), p(&img), "--metrics", "psnr"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("psnr"));
}

#[test]
fn adapter_serve_passes_conformance() {
    let exe = env!("CARGO_BIN_EXE_slidebench");
    let o = run(&[
        "conformance",
        exe,
        "--adapter-arg=adapter-serve",
        "--adapter-arg=refcodec",
    ]);
    assert_eq!(
        code(&o),
        0,
        "{}{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("roundtrip"));
}

#[test]
fn adapter_compress_matches_builtin_size() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.ppm");
    write_slide(&img, 48, 40);
    let exe = env!("CARGO_BIN_EXE_slidebench");
    let via_adapter = dir.path().join("x.pbc");
    let builtin = dir.path().join("y.pbc");
    let o = run(&[
        "compress",
        p(&img),
        p(&via_adapter),
        "--quality",
        "60",
        "--adapter",
        exe,
        "--adapter-arg=adapter-serve",
        "--adapter-arg=refcodec",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        code(&run(&["compress", p(&img), p(&builtin), "--quality", "60"])),
        0
    );
    assert_eq!(
        std::fs::read(&via_adapter).unwrap(),
        std::fs::read(&builtin).unwrap()
    );
}

#[test]
fn tile_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("slide.ppm");
    write_slide(&img, 256, 128);
    let out = dir.path().join("tiles");
    let o = run(&[
        "tile",
        p(&img),
        "--size",
        "32",
        "--count",
        "5",
        "--out",
        p(&out),
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 6);
}

const CONFIG: &str = r#"
seed = 4
[corpus]
synthetic = { count = 2, size = 176, seed = 1 }
[[codecs]]
name = "ref"
kind = "refcodec"
[targets]
bpp = [0.5, 1.0]
[metrics]
psnr = true
ms_ssim = true
[timing]
reps = 1
warmup = 0
"#;

#[test]
fn sweep_and_time_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let o = run(&["--config", p(&cfg), "--out", p(&out), "sweep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rd_points.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(out.join("rd_psnr.svg").exists());

    let o = run(&[
        "report",
        p(&out.join("bundle.json")),
        "--out",
        p(&dir.path().join("again")),
    ]);
    assert_eq!(code(&o), 0);
    let again = std::fs::read_to_string(dir.path().join("again/rd_points.csv")).unwrap();
    assert_eq!(again, csv);

    let tout = dir.path().join("t");
    let o = run(&["--config", p(&cfg), "--out", p(&tout), "time"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let timing: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tout.join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing.as_array().unwrap().len(), 2);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{CONFIG}\nbogus_key = 1\n")).unwrap();
    let o = run(&["--config", p(&cfg), "sweep"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));

    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["sweep"])), 1);
    let img = dir.path().join("missing.ppm");
    assert_ne!(code(&run(&["evaluate", p(&img), p(&img)])), 0);
}

#[test]
fn failing_adapter_gives_partial_exit() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("broken.sh");
    std::fs::write(
        &script,
        "case \"$1\" in\n capabilities) echo '{\"name\":\"broken\",\"version\":\"1\",\"quality_min\":1,\"quality_max\":100,\"quality_kind\":\"int\",\"modes\":[\"encode\",\"decode\"]}' ;;\n *) echo boom >&2; exit 4 ;;\nesac\n",
    )
    .unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        format!(
            "{CONFIG}\n[[codecs]]\nname = \"broken\"\nkind = \"adapter\"\nexe = \"/bin/sh\"\nargs = [\"{}\"]\n",
            p(&script)
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["--config", p(&cfg), "--out", p(&out), "sweep"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("boom"));
    assert!(out.join("rd_points.csv").exists());
}
