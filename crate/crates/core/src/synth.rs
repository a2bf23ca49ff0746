//! Synthetic corpus generation.
//!
//! Benchmarks and tests need a corpus with the right *shape* — hundreds of
//! distinct multiple-choice questions with 4–10 options each — without
//! shipping any dataset. This module fabricates one deterministically from a
//! seed. Question texts are sampled word salads over a fixed vocabulary,
//! which keeps any two questions lexically far apart; that matters because
//! the retrieval layer must never confuse two distinct questions, only
//! recognize exact re-asks.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::rng::SubstreamRng;
use crate::workload::{AnswerLabel, QueryRecord};

/// Vocabulary for question text. Business-flavored to match the kind of
/// exam material the harness is tuned for; the content itself is never
/// interpreted.
const WORDS: &[&str] = &[
    "acquisition", "amortization", "annuity", "arbitrage", "asset", "audit", "balance",
    "bankruptcy", "benchmark", "bond", "breakeven", "budget", "capital", "cartel", "cashflow",
    "collateral", "commodity", "compliance", "compounding", "consortium", "contract", "cost",
    "coupon", "covenant", "credit", "currency", "debenture", "debit", "debt", "default",
    "deflation", "demand", "depreciation", "derivative", "dilution", "dividend", "duopoly",
    "earnings", "elasticity", "endowment", "equilibrium", "equity", "escrow", "exchange",
    "expense", "export", "externality", "forecast", "franchise", "futures", "goodwill",
    "gross", "hedge", "holding", "import", "incentive", "income", "indemnity", "inflation",
    "insolvency", "interest", "inventory", "investment", "invoice", "leverage", "liability",
    "liquidity", "margin", "market", "maturity", "merger", "monopoly", "mortgage", "net",
    "oligopoly", "option", "output", "overhead", "partnership", "payback", "payroll",
    "portfolio", "premium", "price", "principal", "profit", "quota", "rebate", "recession",
    "reserve", "retained", "revenue", "risk", "royalty", "salvage", "securities", "shareholder",
    "solvency", "spread", "stagflation", "subsidy", "supply", "surplus", "takeover", "tariff",
    "taxation", "tender", "trademark", "treasury", "turnover", "underwriting", "utility",
    "valuation", "variance", "venture", "volatility", "voucher", "warranty", "yield",
    "accrual", "actuarial", "aggregate", "allocative", "annualized", "appraised", "bearish",
    "bullish", "callable", "consolidated", "contingent", "convertible", "cyclical", "deferred",
    "diluted", "discounted", "diversified", "fiduciary", "fiscal", "fixed", "floating",
    "fungible", "incremental", "intangible", "marginal", "monetary", "nominal", "operating",
    "preferred", "quarterly", "real", "residual", "secured", "sovereign", "speculative",
    "standardized", "structural", "subordinated", "synergistic", "tangible", "unlevered",
    "weighted", "wholesale", "zero-coupon", "actuary", "broker", "cartelization", "clearing",
    "comptroller", "conglomerate", "custodian", "distributor", "franchisee", "guarantor",
    "intermediary", "lessee", "lessor", "liquidator", "obligor", "regulator", "retailer",
    "stakeholder", "subsidiary", "syndicate", "trustee", "underwriter", "vendor", "wholesaler",
];

const CATEGORIES: &[&str] = &[
    "business", "economics", "finance", "accounting", "marketing", "management",
];

/// Generate `n` distinct multiple-choice questions, deterministic in
/// `(n, seed)`. Each record has 4–10 options and a uniformly chosen gold
/// label within its own option count.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<QueryRecord> {
    let mut rng = SubstreamRng::new(seed, "synth-corpus");
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let word_count = 12 + rng.next_index(7); // 12..=18
        let mut words = Vec::with_capacity(word_count);
        for _ in 0..word_count {
            words.push(WORDS[rng.next_index(WORDS.len())]);
        }
        let mut question = words.join(" ");
        if let Some(first) = question.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        question.push('?');

        let option_count = 4 + rng.next_index(7); // 4..=10
        let options: Vec<String> = (0..option_count)
            .map(|_| {
                let a = WORDS[rng.next_index(WORDS.len())];
                let b = WORDS[rng.next_index(WORDS.len())];
                format!("{a} {b}")
            })
            .collect();
        let gold_label = AnswerLabel::from_index(rng.next_index(option_count))
            .expect("option_count never exceeds the label range");

        records.push(QueryRecord {
            qid: format!("synq-{i:04}"),
            question,
            options,
            gold_label,
            category: CATEGORIES[rng.next_index(CATEGORIES.len())].to_string(),
        });
    }
    records
}

/// Write records as JSONL, one record per line. Returns the number of lines
/// written.
pub fn write_corpus_jsonl(records: &[QueryRecord], path: &Path) -> io::Result<usize> {
    let mut out = BufWriter::new(File::create(path)?);
    for record in records {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(records.len())
}
