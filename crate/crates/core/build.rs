use std::process::Command;

fn main() {
    let version = std::env::var("CARGO_PKG_VERSION").unwrap_or_default();
    let describe = Command::new("git")
        .args(["describe", "--always", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let id = match describe {
        Some(d) => format!("{version}-g{d}"),
        None => version,
    };
    println!("cargo:rustc-env=REFLM_BUILD_ID={id}");
    println!("cargo:rerun-if-changed=build.rs");
}
