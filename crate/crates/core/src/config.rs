//! Sites CSV, constellation spec files and scenario config files.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::orbits::{GroundSite, ShellSpec, SiteRole};
use crate::topology::LinkModel;
use crate::traces::ScenarioConfig;

pub const SITES_HEADER: [&str; 5] = ["site_id", "latitude_deg", "longitude_deg", "altitude_km", "role"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Toml,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Ok(Format::Json),
            Some(e) if e.eq_ignore_ascii_case("toml") => Ok(Format::Toml),
            _ => Err(Error::Config(format!(
                "{}: expected a .json or .toml extension",
                path.display()
            ))),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_role(s: &str) -> Option<SiteRole> {
    match s {
        "client" => Some(SiteRole::Client),
        "origin" => Some(SiteRole::Origin),
        "scheduler" => Some(SiteRole::Scheduler),
        _ => None,
    }
}

fn role_str(r: SiteRole) -> &'static str {
    match r {
        SiteRole::Client => "client",
        SiteRole::Origin => "origin",
        SiteRole::Scheduler => "scheduler",
    }
}

pub fn read_sites(path: impl AsRef<Path>) -> Result<Vec<GroundSite>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sites_from(BufReader::new(f), &path.display().to_string())
}

pub fn read_sites_str(s: &str) -> Result<Vec<GroundSite>> {
    read_sites_from(s.as_bytes(), "<sites>")
}

/// Parses a sites CSV. An empty `altitude_km` field means sea level.
pub fn read_sites_from<R: Read>(input: R, name: &str) -> Result<Vec<GroundSite>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = rdr.records();
    match records.next() {
        None => return Ok(Vec::new()),
        Some(Err(e)) => return Err(Error::parse(name, 1, e.to_string())),
        Some(Ok(h)) => {
            if h.iter().ne(SITES_HEADER) {
                return Err(Error::parse(name, 1, format!("expected header {}", SITES_HEADER.join(","))));
            }
        }
    }
    let mut sites: Vec<GroundSite> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(name, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| Error::parse(name, line, msg);
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("{}: not a number: {:?}", SITES_HEADER[i], &rec[i])))
        };
        let altitude_km = if rec[3].trim().is_empty() { 0.0 } else { num(3)? };
        let role = parse_role(rec[4].trim()).ok_or_else(|| bad(format!("unknown role {:?}", &rec[4])))?;
        let site = GroundSite {
            site_id: rec[0].to_string(),
            latitude_deg: num(1)?,
            longitude_deg: num(2)?,
            altitude_km,
            role,
        };
        site.validate().map_err(|e| bad(e.to_string()))?;
        if sites.iter().any(|s| s.site_id == site.site_id) {
            return Err(bad(format!("duplicate site_id {:?}", site.site_id)));
        }
        sites.push(site);
    }
    Ok(sites)
}

pub fn write_sites_to<W: Write>(sites: &[GroundSite], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let res: csv::Result<()> = (|| {
        w.write_record(SITES_HEADER)?;
        for s in sites {
            w.write_record([
                s.site_id.clone(),
                s.latitude_deg.to_string(),
                s.longitude_deg.to_string(),
                s.altitude_km.to_string(),
                role_str(s.role).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::Config(format!("writing sites: {e}")))
}

pub fn parse_shell(s: &str, format: Format) -> Result<ShellSpec> {
    match format {
        Format::Json => ShellSpec::from_json_str(s),
        Format::Toml => ShellSpec::from_toml_str(s),
    }
}

pub fn load_shell(path: impl AsRef<Path>) -> Result<ShellSpec> {
    let path = path.as_ref();
    parse_shell(&read_to_string(path)?, Format::from_path(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// On-disk scenario config; `shell` and `sites` are paths relative to the
/// config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub shell: PathBuf,
    pub sites: PathBuf,
    pub duration_s: u32,
    #[serde(default = "one")]
    pub step_s: u32,
    #[serde(default)]
    pub ramp_up_s: u32,
    #[serde(default)]
    pub candidates: Option<usize>,
    #[serde(default)]
    pub link: LinkModel,
}

fn one() -> u32 {
    1
}

impl ScenarioFile {
    pub fn parse(s: &str, format: Format) -> Result<Self> {
        match format {
            Format::Json => serde_json::from_str(s).map_err(|e| Error::Config(format!("scenario: {e}"))),
            Format::Toml => toml::from_str(s).map_err(|e| Error::Config(format!("scenario: {e}"))),
        }
    }

    pub fn resolve(&self, base: &Path) -> Result<ScenarioConfig> {
        let shell = load_shell(base.join(&self.shell))?;
        let sites = read_sites(base.join(&self.sites))?;
        let cfg = ScenarioConfig {
            shell,
            link: self.link.clone(),
            sites,
            duration_s: self.duration_s,
            step_s: self.step_s,
            ramp_up_s: self.ramp_up_s,
            candidates: self.candidates,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let file = ScenarioFile::parse(&read_to_string(path)?, Format::from_path(path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    file.resolve(path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Attachment;

    const SITES: &str = "site_id,latitude_deg,longitude_deg,altitude_km,role\n\
redmond,47.67,-122.12,0,client\n\
origin-1,47.6,-122.3,,origin\n";

    #[test]
    fn parses_sites() {
        let s = read_sites_str(SITES).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0], GroundSite::client("redmond", 47.67, -122.12));
        assert_eq!(s[1].role, SiteRole::Origin);
        assert_eq!(s[1].altitude_km, 0.0);
    }

    #[test]
    fn sites_round_trip() {
        let s = read_sites_str(SITES).unwrap();
        let mut buf = Vec::new();
        write_sites_to(&s, &mut buf).unwrap();
        assert_eq!(read_sites_str(std::str::from_utf8(&buf).unwrap()).unwrap(), s);
    }

    #[test]
    fn site_errors_name_line() {
        let cases = [
            ("site_id,lat\n", 1),
            ("site_id,latitude_deg,longitude_deg,altitude_km,role\na,1,2,0,client\nb,x,2,0,client\n", 3),
            ("site_id,latitude_deg,longitude_deg,altitude_km,role\na,91,2,0,client\n", 2),
            ("site_id,latitude_deg,longitude_deg,altitude_km,role\na,1,2,0,server\n", 2),
            ("site_id,latitude_deg,longitude_deg,altitude_km,role\na,1,2,0,client\na,1,2,0,client\n", 3),
        ];
        for (text, line) in cases {
            match read_sites_str(text) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(read_sites_str("").unwrap().is_empty());
    }

    #[test]
    fn format_by_extension() {
        assert_eq!(Format::from_path(Path::new("a/b.JSON")).unwrap(), Format::Json);
        assert_eq!(Format::from_path(Path::new("b.toml")).unwrap(), Format::Toml);
        assert!(Format::from_path(Path::new("b.yaml")).is_err());
    }

    #[test]
    fn loads_scenario_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("data")).unwrap();
        std::fs::write(dir.path().join("data/sites.csv"), SITES).unwrap();
        std::fs::write(
            dir.path().join("data/shell.toml"),
            "planes = 72\nsats_per_plane = 22\naltitude_km = 550\ninclination_deg = 53\nphase_offset = 39\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("scenario.toml"),
            "shell = \"data/shell.toml\"\nsites = \"data/sites.csv\"\nduration_s = 60\n\n[link]\nattachment = \"access\"\nmin_elevation_deg = 30\n",
        )
        .unwrap();
        let cfg = load_scenario(dir.path().join("scenario.toml")).unwrap();
        assert_eq!(cfg.shell.satellite_count(), 1584);
        assert_eq!(cfg.sites.len(), 2);
        assert_eq!((cfg.duration_s, cfg.step_s, cfg.ramp_up_s), (60, 1, 0));
        assert_eq!(cfg.link.min_elevation_deg, 30.0);
        assert_eq!(cfg.link.attachment, Attachment::Access);

        std::fs::write(
            dir.path().join("s.json"),
            r#"{"shell": "data/shell.toml", "sites": "data/missing.csv", "duration_s": 5}"#,
        )
        .unwrap();
        let err = load_scenario(dir.path().join("s.json")).unwrap_err().to_string();
        assert!(err.contains("missing.csv"), "{err}");
    }

    #[test]
    fn scenario_rejects_unknown_keys() {
        assert!(ScenarioFile::parse("shell='a'\nsites='b'\nduration_s=1\nfoo=2\n", Format::Toml).is_err());
    }
}
