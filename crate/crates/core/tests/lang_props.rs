use std::collections::BTreeMap;

use proptest::prelude::*;

use deepstrat_core::lang::{
    format_script, parse_script, parse_script_bytes, repeat_bound, validate_script, Condition,
    Expression, ScriptAst, Statement, StepBlock, TemplatePart, ToolName, ValidatorLimits, BUILTINS,
    KEYWORDS,
};

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,6}".prop_filter("reserved word", |s| {
        !KEYWORDS.contains(&s.as_str()) && !BUILTINS.contains(&s.as_str())
    })
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            Just('a'),
            Just(' '),
            Just('{'),
            Just('}'),
            Just('"'),
            Just('\\'),
            Just('\n'),
            Just('\t'),
            Just('é'),
            Just('#'),
        ],
        0..8,
    )
    .prop_map(|v| v.into_iter().collect())
}

/// Interpolations in normal form: alternating text and holes, at least one
/// hole, no empty text parts.
fn interpolation() -> impl Strategy<Value = Expression> {
    prop::collection::vec((text(), ident()), 1..3).prop_flat_map(|pairs| {
        text().prop_map(move |tail| {
            let mut parts = Vec::new();
            for (t, hole) in &pairs {
                if !t.is_empty() {
                    parts.push(TemplatePart::Text(t.clone()));
                }
                parts.push(TemplatePart::Hole(hole.clone()));
            }
            if !tail.is_empty() {
                parts.push(TemplatePart::Text(tail));
            }
            Expression::Interpolate(parts)
        })
    })
}

fn expression() -> impl Strategy<Value = Expression> {
    let leaf = prop_oneof![
        text().prop_map(Expression::Str),
        (-1_000_000_000_000i64..1_000_000_000_000).prop_map(Expression::Int),
        ident().prop_map(Expression::Var),
        Just(Expression::Var("PROMPT".into())),
        interpolation(),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        let b = |e: Expression| Box::new(e);
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(Expression::List),
            prop::collection::vec(inner.clone(), 1..4).prop_map(Expression::Concat),
            (inner.clone(), inner.clone()).prop_map(move |(s, l)| Expression::JoinWith {
                separator: b(s),
                list: b(l)
            }),
            inner
                .clone()
                .prop_map(move |e| Expression::SplitLines(b(e))),
            inner
                .clone()
                .prop_map(move |e| Expression::StripBlank(b(e))),
            inner.clone().prop_map(move |e| Expression::Length(b(e))),
            (
                inner.clone(),
                inner.clone(),
                prop::option::of(inner.clone())
            )
                .prop_map(move |(t, i, s)| Expression::Append {
                    target: b(t),
                    item: b(i),
                    separator: s.map(b),
                }),
            (
                prop_oneof![Just("search".to_string()), Just("llm".to_string()), ident()],
                prop::collection::vec(inner, 0..3)
            )
                .prop_map(|(tool, args)| Expression::ToolCall { tool, args }),
        ]
    })
}

fn condition() -> impl Strategy<Value = Condition> {
    let e = expression;
    prop_oneof![
        (e(), e()).prop_map(|(a, b)| Condition::Eq(a, b)),
        (e(), e()).prop_map(|(a, b)| Condition::Ne(a, b)),
        (e(), e()).prop_map(|(a, b)| Condition::Lt(a, b)),
        (e(), e()).prop_map(|(a, b)| Condition::Le(a, b)),
        e().prop_map(Condition::IsEmpty),
        e().prop_map(Condition::NotEmpty),
    ]
}

fn statement() -> impl Strategy<Value = Statement> {
    let simple = prop_oneof![
        (
            prop_oneof![ident(), Just("PROMPT".to_string())],
            expression()
        )
            .prop_map(|(name, value)| Statement::Assign { name, value }),
        (
            expression(),
            expression(),
            prop::collection::btree_map(ident(), expression(), 0..2)
        )
            .prop_map(|(kind, description, extra)| Statement::YieldNotification {
                kind,
                description,
                extra
            }),
        expression().prop_map(|report| Statement::YieldReport { report }),
    ];
    simple.prop_recursive(3, 16, 3, |inner| {
        let body = prop::collection::vec(inner, 0..3);
        prop_oneof![
            (ident(), expression(), body.clone()).prop_map(|(var, iterable, body)| {
                Statement::ForEach {
                    var,
                    iterable,
                    body,
                }
            }),
            (expression(), body.clone())
                .prop_map(|(count, body)| Statement::RepeatN { count, body }),
            (condition(), body.clone(), body).prop_map(|(condition, then_body, else_body)| {
                Statement::If {
                    condition,
                    then_body,
                    else_body,
                }
            }),
        ]
    })
}

fn label() -> impl Strategy<Value = String> {
    prop::collection::vec(0u32..20, 1..4).prop_map(|parts| {
        parts
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(".")
    })
}

fn script() -> impl Strategy<Value = ScriptAst> {
    prop::collection::vec(
        (
            label(),
            prop_oneof![Just(String::new()), "[A-Za-z][A-Za-z ,.]{0,12}[a-z]"],
            prop::collection::vec(statement(), 0..4),
        ),
        1..4,
    )
    .prop_map(|steps| {
        ScriptAst::new(
            steps
                .into_iter()
                .map(|(label, title, statements)| StepBlock {
                    label,
                    title,
                    statements,
                })
                .collect(),
        )
    })
}

/// Scripts built from a small vocabulary so that a useful share of them
/// pass validation.
fn plausible_script() -> impl Strategy<Value = String> {
    let stmt = prop_oneof![
        Just("x = search(PROMPT)\n".to_string()),
        Just("y = llm(\"summarize\", PROMPT)\n".to_string()),
        Just("x = fetch(PROMPT)\n".to_string()),
        Just("yield_notification(\"search_started\", \"{PROMPT}\")\n".to_string()),
        (1i64..15).prop_map(|n| format!("repeat {n} {{\n  x = concat(PROMPT)\n}}\n")),
        (1i64..15).prop_map(|n| format!(
            "repeat {n} {{\n  repeat {n} {{\n    repeat {n} {{\n      x = PROMPT\n    }}\n  }}\n}}\n"
        )),
        Just("for p in split_lines(PROMPT) {\n  x = p\n}\n".to_string()),
        Just("if empty(PROMPT) {\n  x = \"a\"\n} else {\n  x = \"b\"\n}\n".to_string()),
    ];
    prop::collection::vec(stmt, 0..6).prop_map(|stmts| {
        format!(
            "# Step 1: Work\n{}\n# Step 2: Report\nyield_report(PROMPT)\n",
            stmts.concat()
        )
    })
}

fn assert_whitelisted(e: &Expression) {
    e.visit(&mut |e| {
        if let Expression::ToolCall { tool, .. } = e {
            assert!(
                ToolName::parse(tool).is_some(),
                "accepted script calls {tool}"
            );
        }
    });
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    #[test]
    fn format_then_parse_is_identity(ast in script()) {
        let source = format_script(&ast);
        let reparsed = parse_script(&source)
            .map_err(|e| TestCaseError::fail(format!("{e}\n{source}")))?;
        prop_assert_eq!(&reparsed, &ast);
        prop_assert_eq!(format_script(&reparsed), source);
    }

    #[test]
    fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = parse_script_bytes(&bytes);
    }

    #[test]
    fn parser_is_total_on_near_miss_text(source in "[# a-z0-9(){}\\[\\]\",=:.\n<!-]{0,120}") {
        let _ = parse_script(&format!("# Step 1: x\n{source}"));
    }

    #[test]
    fn accepted_scripts_are_closed_and_bounded(source in plausible_script()) {
        let limits = ValidatorLimits::default();
        let ast = parse_script(&source).unwrap();
        let report = validate_script(&ast, &limits);
        if report.is_accept() {
            ast.walk(|_, stmt, depth| {
                assert!(depth < limits.max_depth);
                for e in stmt.expressions() {
                    assert_whitelisted(e);
                }
            });
            let bound = repeat_bound(&ast).expect("accepted scripts have a static bound");
            prop_assert!(bound <= limits.max_total_repeat);
        }
    }

    #[test]
    fn generated_trees_respect_validation(ast in script()) {
        let limits = ValidatorLimits::default();
        if validate_script(&ast, &limits).is_accept() {
            ast.walk(|_, stmt, _| {
                for e in stmt.expressions() {
                    assert_whitelisted(e);
                }
            });
            prop_assert!(repeat_bound(&ast).unwrap() <= limits.max_total_repeat);
        }
    }
}

#[test]
fn bounds_of_bundled_scripts() {
    let mut bounds = BTreeMap::new();
    for seed in deepstrat_core::library::SEEDS {
        bounds.insert(seed.name, repeat_bound(&seed.parse()));
    }
    assert_eq!(bounds["minimal"], Some(1));
    assert_eq!(bounds["expansive"], Some(1));
    assert_eq!(bounds["intensive"], Some(2));
}
