//! Key-value config files.
//!
//! One `key = value` per line, keys spelled like the long flags without the
//! leading dashes (`beta-from = -1.5`; underscores are accepted too). `#`
//! starts a comment. `true` / `false` switch boolean flags on or off. Flags
//! given on the command line win over the file.

use std::path::Path;

use pstrat_core::Error;

/// Parses a config file into long-flag arguments.
pub fn parse(text: &str) -> Result<Vec<String>, Error> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("config line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        let val = v.trim().trim_matches('"');
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(Error::InvalidConfig(format!("config line {}: bad key `{}`", i + 1, k.trim())));
        }
        if key == "config" {
            return Err(Error::InvalidConfig("config files cannot include other config files".into()));
        }
        match val {
            "true" => out.push(format!("--{key}")),
            "false" => {}
            _ => {
                out.push(format!("--{key}"));
                out.push(val.to_string());
            }
        }
    }
    Ok(out)
}

/// Location of `--config` among the raw arguments, if present.
pub fn find_config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Splices the config file's flags in right after the subcommand so that
/// explicit flags, which come later, override them.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>, Error> {
    let Some(path) = find_config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| Error::Io(format!("{path}: {e}")))?;
    let extra = parse(&text)?;
    // argv[0] is the program, argv[1] the subcommand.
    let split = argv.len().min(2);
    let mut out = argv[..split].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[split..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_values_switches_and_comments() {
        let args = parse("# grid\nbeta_from = -1.5\nbeta-steps=16 # trailing\nreduced = true\nexclusion = false\n").unwrap();
        assert_eq!(args, ["--beta-from", "-1.5", "--beta-steps", "16", "--reduced"]);
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(matches!(parse("seed 7"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn finds_both_spellings() {
        let a = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(find_config_path(&a(&["p", "itt", "--config", "c.txt"])), Some("c.txt".into()));
        assert_eq!(find_config_path(&a(&["p", "itt", "--config=c.txt"])), Some("c.txt".into()));
        assert_eq!(find_config_path(&a(&["p", "itt"])), None);
    }
}
