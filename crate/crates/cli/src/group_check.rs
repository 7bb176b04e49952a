//! `group-check`: print the symmetry group and verify its axioms.
//!
//! Everything here is integer permutations, so every check is exact:
//! closure and associativity over all triples, identity, inverses, and the
//! dihedral relations r³ = e, f² = e, f·r·f = r². Any violation makes the
//! command exit nonzero — this is the group oracle exposed as a tool.

use std::process::ExitCode;

use anyhow::Result;
use tenseg_core::geometry::{build_canonical_topology, build_d3_group, GroupLabel};

pub fn run() -> Result<ExitCode> {
    let group = build_d3_group(&build_canonical_topology())?;
    let mut failures = Vec::new();

    println!("elements ({}):", group.elements().len());
    for e in group.elements() {
        println!(
            "  {:<3} endcaps {:?} rods {:?} tendons {:?}",
            e.label.as_str(),
            e.endcap_perm,
            e.rod_perm,
            e.tendon_perm
        );
    }

    // composition table: row g, column h, cell g∘h (h applied first)
    println!();
    print!("     ");
    for h in GroupLabel::ALL {
        print!("{:>4}", h.as_str());
    }
    println!();
    let mut table = [[GroupLabel::E; 6]; 6];
    for (i, g) in GroupLabel::ALL.into_iter().enumerate() {
        print!("{:>4} ", g.as_str());
        for (j, h) in GroupLabel::ALL.into_iter().enumerate() {
            let gh = group.compose(group.element(g), group.element(h))?;
            table[i][j] = gh.label;
            print!("{:>4}", gh.label.as_str());
        }
        println!();
    }
    println!();

    // distinct elements
    for i in 0..6 {
        for j in i + 1..6 {
            if group.elements()[i].endcap_perm == group.elements()[j].endcap_perm {
                failures.push(format!("elements {i} and {j} coincide"));
            }
        }
    }
    // identity row/column
    for (j, h) in GroupLabel::ALL.into_iter().enumerate() {
        if table[0][j] != h || table[j][0] != h {
            failures.push(format!("identity law fails at {}", h.as_str()));
        }
    }
    // closure is implicit in `compose` resolving every cell; associativity:
    for g in GroupLabel::ALL {
        for h in GroupLabel::ALL {
            for k in GroupLabel::ALL {
                let gh_k = group.compose(
                    group.compose(group.element(g), group.element(h))?,
                    group.element(k),
                )?;
                let g_hk = group.compose(
                    group.element(g),
                    group.compose(group.element(h), group.element(k))?,
                )?;
                if gh_k.label != g_hk.label {
                    failures.push(format!(
                        "associativity fails at ({}, {}, {})",
                        g.as_str(),
                        h.as_str(),
                        k.as_str()
                    ));
                }
            }
        }
    }
    // inverses
    for g in GroupLabel::ALL {
        let inv = group.inverse(group.element(g))?;
        let prod = group.compose(group.element(g), inv)?;
        if !prod.is_identity() {
            failures.push(format!("inverse fails at {}", g.as_str()));
        }
    }
    // dihedral relations
    let (e, r, f) = (
        group.element(GroupLabel::E),
        group.element(GroupLabel::R),
        group.element(GroupLabel::F),
    );
    let r3 = group.compose(group.compose(r, r)?, r)?;
    if r3.label != e.label {
        failures.push("r^3 != e".into());
    }
    let f2 = group.compose(f, f)?;
    if f2.label != e.label {
        failures.push("f^2 != e".into());
    }
    let frf = group.compose(group.compose(f, r)?, f)?;
    if frf.label != GroupLabel::R2 {
        failures.push(format!("f·r·f = {} != r2", frf.label.as_str()));
    }

    if failures.is_empty() {
        println!("all axioms hold");
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &failures {
            eprintln!("FAIL: {f}");
        }
        Ok(ExitCode::FAILURE)
    }
}
