use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sellkit_codegen::{render_pairs, render_widths, KernelConfig, Template, Unit};

fn main() {
    let manifest = PathBuf::from(env::var("CARGO_MANIFEST_DIR").unwrap());
    let out = PathBuf::from(env::var("OUT_DIR").unwrap());

    println!("cargo:rerun-if-env-changed=SELLKIT_KERNEL_CONFIG");
    let cfg_path = env::var_os("SELLKIT_KERNEL_CONFIG")
        .map(PathBuf::from)
        .unwrap_or_else(|| manifest.join("kernels.toml"));
    println!("cargo:rerun-if-changed={}", cfg_path.display());
    let cfg = KernelConfig::from_path(&cfg_path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", cfg_path.display()));

    write(
        &out.join("build_config.rs"),
        &format!(
            "pub const CHUNK_HEIGHTS: &[usize] = &{:?};\npub const BLOCK_WIDTHS: &[usize] = &{:?};\n",
            cfg.chunk_heights, cfg.block_widths
        ),
    );

    let sell = load_template(&manifest, "sell_kernel");
    let units = render_pairs(&sell, &cfg).unwrap_or_else(|e| panic!("{e}"));
    write_units(&out, &units);
    write(&out.join("spmv_dispatch.rs"), &spmv_dispatch(&cfg, &units));

    let tsm = load_template(&manifest, "tsm_kernel");
    let units = render_widths(&tsm, &cfg).unwrap_or_else(|e| panic!("{e}"));
    write_units(&out, &units);
    write(&out.join("tsm_dispatch.rs"), &tsm_dispatch(&units));
}

fn load_template(manifest: &Path, name: &str) -> Template {
    let path = manifest.join("templates").join(format!("{name}.rs.in"));
    println!("cargo:rerun-if-changed={}", path.display());
    let src = fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    Template::new(name, src)
}

fn write(path: &Path, text: &str) {
    // only touch files whose content changed, to keep incremental builds quiet
    if fs::read_to_string(path).ok().as_deref() != Some(text) {
        fs::write(path, text).unwrap_or_else(|e| panic!("writing {}: {e}", path.display()));
    }
}

fn write_units(out: &Path, units: &[Unit]) {
    for u in units {
        write(&out.join(&u.file_name), &u.source);
    }
}

fn include_units(s: &mut String, units: &[Unit]) {
    for u in units {
        writeln!(s, "include!(concat!(env!(\"OUT_DIR\"), \"/{}\"));", u.file_name).unwrap();
    }
}

fn spmv_dispatch(cfg: &KernelConfig, units: &[Unit]) -> String {
    let mut s = String::new();
    include_units(&mut s, units);

    for (kind, prefix) in [("vec", "sell_vec"), ("plain", "sell_plain")] {
        writeln!(s, "\npub(crate) fn fixed_{kind}<S: Scalar>(c: usize, w: usize) -> Option<ChunkFn<S>> {{").unwrap();
        s.push_str("    match (c, w) {\n");
        for u in units {
            let (c, w) = (u.chunk_height, u.block_width);
            writeln!(s, "        ({c}, {w}) => Some({prefix}_{c}_{w}::<S> as ChunkFn<S>),").unwrap();
        }
        s.push_str("        _ => None,\n    }\n}\n");
    }

    for (kind, func) in [("vec", "vec_c"), ("plain", "plain_c")] {
        writeln!(s, "\npub(crate) fn height_{kind}<S: Scalar>(c: usize) -> Option<ChunkFn<S>> {{").unwrap();
        s.push_str("    match c {\n");
        for c in &cfg.chunk_heights {
            writeln!(s, "        {c} => Some({func}::<S, {c}> as ChunkFn<S>),").unwrap();
        }
        s.push_str("        _ => None,\n    }\n}\n");
    }

    s.push_str("\npub(crate) fn width_plain<S: Scalar>(w: usize) -> Option<ChunkFn<S>> {\n    match w {\n");
    for w in &cfg.block_widths {
        writeln!(s, "        {w} => Some(plain_w::<S, {w}> as ChunkFn<S>),").unwrap();
    }
    s.push_str("        _ => None,\n    }\n}\n");
    s
}

fn tsm_dispatch(units: &[Unit]) -> String {
    let mut s = String::new();
    include_units(&mut s, units);
    for kind in ["tsmttsm", "tsmm"] {
        writeln!(s, "\npub(crate) fn {kind}_fixed<S: Scalar>(k: usize) -> Option<RowKernel<S>> {{").unwrap();
        s.push_str("    match k {\n");
        for u in units {
            let w = u.block_width;
            writeln!(s, "        {w} => Some({kind}_row_{w}::<S> as RowKernel<S>),").unwrap();
        }
        s.push_str("        _ => None,\n    }\n}\n");
    }
    s
}
