//! Bus/line CSV ingestion.
//!
//! Bus file:
//!
//! ```text
//! #base,10,12.66
//! id,p_load_kw,q_load_kvar,pv_p_kw,pv_s_kva
//! 0,0,0,,
//! 1,100,60,400,500
//! ```
//!
//! The `#base` line (S_base in MVA, V_base in kV) is mandatory. Blank PV
//! fields mean the bus has no inverter. Line file: `from,to,r_ohm,x_ohm`.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{Base, Bus, GridError, Line, Network, PvUnit};

pub const BUS_HEADER: &str = "id,p_load_kw,q_load_kvar,pv_p_kw,pv_s_kva";
pub const LINE_HEADER: &str = "from,to,r_ohm,x_ohm";

#[derive(Debug, Deserialize)]
struct BusRow {
    id: usize,
    p_load_kw: f64,
    q_load_kvar: f64,
    pv_p_kw: Option<f64>,
    pv_s_kva: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct LineRow {
    from: usize,
    to: usize,
    r_ohm: f64,
    x_ohm: f64,
}

pub fn load_network(
    bus_path: impl AsRef<Path>,
    line_path: impl AsRef<Path>,
) -> Result<Network, GridError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| GridError::Parse {
            location: p.display().to_string(),
            message: e.to_string(),
        })
    };
    load_network_from_str(&read(bus_path.as_ref())?, &read(line_path.as_ref())?)
}

pub fn load_network_from_str(bus_csv: &str, line_csv: &str) -> Result<Network, GridError> {
    let (base, body) = split_base(bus_csv)?;
    let s_kw = base.s_kw();
    let z = base.z_ohm();

    let mut rows: Vec<BusRow> = Vec::new();
    let mut rdr = reader(body);
    check_header(&mut rdr, BUS_HEADER, "bus file")?;
    for (k, rec) in rdr.deserialize().enumerate() {
        let row: BusRow = rec.map_err(|e| row_error("bus file", k, e))?;
        rows.push(row);
    }
    rows.sort_by_key(|r| r.id);

    let mut buses = Vec::with_capacity(rows.len());
    let mut pv_units = Vec::new();
    for row in rows {
        buses.push(Bus {
            id: row.id,
            p_load: row.p_load_kw / s_kw,
            q_load: row.q_load_kvar / s_kw,
            pv: None,
        });
        match (row.pv_p_kw, row.pv_s_kva) {
            (Some(p), Some(s)) => pv_units.push(PvUnit::new(row.id, p / s_kw, s / s_kw)),
            (None, None) => {}
            _ => {
                return Err(GridError::Parse {
                    location: format!("bus file, bus {}", row.id),
                    message: "pv_p_kw and pv_s_kva must both be set or both blank".into(),
                })
            }
        }
    }

    let mut lines = Vec::new();
    let mut rdr = reader(line_csv);
    check_header(&mut rdr, LINE_HEADER, "line file")?;
    for (k, rec) in rdr.deserialize().enumerate() {
        let row: LineRow = rec.map_err(|e| row_error("line file", k, e))?;
        lines.push(Line::new(row.from, row.to, row.r_ohm / z, row.x_ohm / z));
    }

    Network::new(buses, lines, pv_units, base)
}

fn reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(body.as_bytes())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &str, what: &str) -> Result<(), GridError> {
    let header = rdr.headers().map_err(|e| GridError::Parse {
        location: format!("{what}, header"),
        message: e.to_string(),
    })?;
    let got: Vec<&str> = header.iter().collect();
    let want: Vec<&str> = expected.split(',').collect();
    if got != want {
        return Err(GridError::Parse {
            location: format!("{what}, header"),
            message: format!("expected `{expected}`, found `{}`", got.join(",")),
        });
    }
    Ok(())
}

fn row_error(what: &str, k: usize, e: csv::Error) -> GridError {
    GridError::Parse {
        location: format!("{what}, data row {}", k + 1),
        message: e.to_string(),
    }
}

fn split_base(bus_csv: &str) -> Result<(Base, &str), GridError> {
    let trimmed = bus_csv.trim_start();
    let (first, rest) = trimmed.split_once('\n').unwrap_or((trimmed, ""));
    let fields: Vec<&str> = first.trim().split(',').map(str::trim).collect();
    if fields.first() != Some(&"#base") {
        return Err(GridError::Unit(
            "bus file must start with `#base,S_base_MVA,V_base_kV`".into(),
        ));
    }
    if fields.len() != 3 {
        return Err(GridError::Unit(format!(
            "malformed base line `{}`",
            first.trim()
        )));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| GridError::Unit(format!("cannot parse base value `{s}`")))
    };
    Ok((Base::new(parse(fields[1])?, parse(fields[2])?)?, rest))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str =
        "#base,1,10\nid,p_load_kw,q_load_kvar,pv_p_kw,pv_s_kva\n0,0,0,,\n1,200,100,,\n";

    #[test]
    fn two_bus_round_trip() {
        let net = load_network_from_str(TWO_BUS, "from,to,r_ohm,x_ohm\n0,1,5,5\n").unwrap();
        assert_eq!(net.n_buses(), 2);
        assert_eq!(net.n_lines(), 1);
        assert!((net.buses()[1].p_load - 0.2).abs() < 1e-15);
        assert!((net.lines()[0].r - 0.05).abs() < 1e-15);
    }

    #[test]
    fn ieee33_dimensions() {
        let net = Network::ieee33();
        assert_eq!(net.n_buses(), 33);
        assert_eq!(net.n_lines(), 32);
        let p: f64 = net.buses().iter().map(|b| b.p_load).sum();
        assert!((p * net.base().s_kw() - 3715.0).abs() < 1e-9);
    }

    #[test]
    fn duplicate_line_is_a_topology_error() {
        let err =
            load_network_from_str(TWO_BUS, "from,to,r_ohm,x_ohm\n0,1,5,5\n0,1,5,5\n").unwrap_err();
        assert!(matches!(err, GridError::Topology(_)));
    }

    #[test]
    fn missing_base_is_a_unit_error() {
        let body = TWO_BUS.split_once('\n').unwrap().1;
        let err = load_network_from_str(body, "from,to,r_ohm,x_ohm\n0,1,5,5\n").unwrap_err();
        assert!(matches!(err, GridError::Unit(_)));
    }

    #[test]
    fn malformed_row_is_a_parse_error() {
        let err = load_network_from_str(TWO_BUS, "from,to,r_ohm,x_ohm\n0,1,abc,5\n").unwrap_err();
        match err {
            GridError::Parse { location, .. } => assert!(location.contains("row 1"), "{location}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn half_specified_pv_is_rejected() {
        let bus = "#base,1,10\nid,p_load_kw,q_load_kvar,pv_p_kw,pv_s_kva\n0,0,0,,\n1,200,100,50,\n";
        let err = load_network_from_str(bus, "from,to,r_ohm,x_ohm\n0,1,5,5\n").unwrap_err();
        assert!(matches!(err, GridError::Parse { .. }));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let err = load_network_from_str(TWO_BUS, "a,b,c,d\n0,1,5,5\n").unwrap_err();
        assert!(matches!(err, GridError::Parse { .. }));
    }
}
