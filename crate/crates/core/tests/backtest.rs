mod common;

use common::*;
use hist_core::backtest::{grid_search_k, simulate, top_k, CostModel, Side, INITIAL_CAPITAL};
use hist_core::HistError;
use proptest::prelude::*;

fn ledger_inputs() -> (hist_core::data::PriceTable, Vec<hist_core::metrics::CrossSection>) {
    let closes: Vec<Vec<f64>> = LEDGER_CLOSES.iter().map(|r| r.to_vec()).collect();
    let preds: Vec<Vec<f64>> = LEDGER_PREDICTIONS.iter().map(|r| r.to_vec()).collect();
    (price_table(&closes), sections(&preds))
}

#[test]
fn scripted_ledger_matches_the_hand_computation() {
    let (prices, secs) = ledger_inputs();
    let state = simulate(&secs, &prices, 2, CostModel::default(), INITIAL_CAPITAL).unwrap();
    let hand = hand_ledger(INITIAL_CAPITAL);
    assert_eq!(state.equity.len(), 3);
    for ((_, got), want) in state.equity.iter().zip(hand) {
        assert!(((got - want) / INITIAL_CAPITAL).abs() < 1e-12, "{got} vs {want}");
    }
    let cr = state.final_return().unwrap();
    assert!((cr - (hand[2] - INITIAL_CAPITAL) / INITIAL_CAPITAL).abs() < 1e-12);
    let sides: Vec<(u32, usize, Side)> =
        state.trades.iter().map(|t| ((t.date - day(0)).num_days() as u32, t.stock, t.side)).collect();
    assert_eq!(
        sides,
        vec![
            (0, 0, Side::Buy),
            (0, 1, Side::Buy),
            (1, 1, Side::Sell),
            (1, 0, Side::Sell),
            (1, 2, Side::Buy),
            (2, 0, Side::Sell),
            (2, 2, Side::Buy),
        ]
    );
    for t in &state.trades {
        let rate = if t.side == Side::Buy { 0.0005 } else { 0.0015 };
        assert!((t.cost - rate * t.notional()).abs() <= 1e-9 * t.notional());
    }
}

#[test]
fn single_purchase_has_the_closed_form() {
    let prices = price_table(&[vec![37.5]]);
    let state = simulate(&sections(&[vec![1.0]]), &prices, 1, CostModel::default(), 1e8).unwrap();
    let shares = state.holdings[&0].shares;
    assert!((shares - 1e8 / (37.5 * 1.0005)).abs() < 1e-6);
    assert!(state.cash.abs() < 1e-6);
}

#[test]
fn wide_k_with_equal_predictions_holds_everything_equally() {
    let prices = price_table(&[vec![5.0, 10.0, 25.0, 40.0]]);
    let state = simulate(&sections(&[vec![0.0; 4]]), &prices, 10, CostModel::default(), 1e6).unwrap();
    let expect = 1e6 / (4.0 * 1.0005);
    for (i, p) in [5.0, 10.0, 25.0, 40.0].iter().enumerate() {
        assert!((state.holdings[&i].shares * p - expect).abs() < 1e-8);
    }
}

#[test]
fn no_trades_means_zero_return() {
    let prices = price_table(&[vec![5.0], vec![6.0]]);
    let secs = sections(&[vec![], vec![]])
        .into_iter()
        .map(|mut s| {
            s.stocks.clear();
            s
        })
        .collect::<Vec<_>>();
    let state = simulate(&secs, &prices, 3, CostModel::default(), 1e6).unwrap();
    assert!(state.trades.is_empty());
    assert!(state.cumulative_return().iter().all(|&(_, cr)| cr == 0.0));
}

#[test]
fn cost_free_buy_and_hold_tracks_the_price_relative() {
    let closes = vec![vec![20.0], vec![21.3], vec![19.7], vec![24.1]];
    let state = simulate(&sections(&vec![vec![1.0]; 4]), &price_table(&closes), 1, CostModel::FREE, 1e8).unwrap();
    for (t, &(_, cr)) in state.cumulative_return().iter().enumerate() {
        assert!((cr - (closes[t][0] / 20.0 - 1.0)).abs() < 1e-12);
    }
}

#[test]
fn rising_prices_give_a_rising_curve() {
    let closes: Vec<Vec<f64>> = (0..6).map(|t| vec![10.0 + t as f64, 20.0 + 2.0 * t as f64]).collect();
    let state = simulate(&sections(&vec![vec![1.0, 0.5]; 6]), &price_table(&closes), 2, CostModel::FREE, 1e6).unwrap();
    let cr = state.cumulative_return();
    assert!(cr.windows(2).all(|w| w[1].1 >= w[0].1));
}

#[test]
fn invalid_inputs_are_rejected() {
    let (prices, secs) = ledger_inputs();
    assert!(simulate(&secs, &prices, 0, CostModel::default(), 1e6).is_err());
    assert!(simulate(&secs, &prices, 2, CostModel { buy: -0.1, sell: 0.0 }, 1e6).is_err());
    let mut late = secs.clone();
    late[0].date = day(40);
    assert!(matches!(simulate(&late, &prices, 2, CostModel::default(), 1e6), Err(HistError::DateNotFound(_))));
}

#[test]
fn top_k_breaks_ties_by_key() {
    assert_eq!(top_k(&[7, 3, 5], &[1.0, 1.0, 2.0], 2), vec![2, 1]);
}

#[test]
fn grid_picks_the_constructed_optimum() {
    let returns = |k: usize| Ok(match k { 30 => 0.4, 20 => 0.35, _ => 0.1 });
    let (k, scores) = grid_search_k(&[50, 10, 30, 20, 40], returns).unwrap();
    assert_eq!(k, 30);
    assert_eq!(scores.iter().map(|s| s.0).collect::<Vec<_>>(), vec![10, 20, 30, 40, 50]);
    assert_eq!(grid_search_k(&[25], |_| Ok(-0.2)).unwrap().0, 25);
    assert_eq!(grid_search_k(&[40, 20, 30], |_| Ok(0.0)).unwrap().0, 20);
    assert!(grid_search_k(&[], |_| Ok(0.0)).is_err());
}

#[test]
fn grid_over_simulations_finds_the_best_k() {
    // stock 0 doubles, the others are flat: k = 1 concentrates on it
    let closes = vec![vec![10.0, 10.0, 10.0], vec![20.0, 10.0, 10.0]];
    let prices = price_table(&closes);
    let secs = sections(&vec![vec![3.0, 2.0, 1.0]; 2]);
    let (k, _) = grid_search_k(&[1, 2, 3], |k| {
        Ok(simulate(&secs, &prices, k, CostModel::default(), 1e6)?.final_return().unwrap())
    })
    .unwrap();
    assert_eq!(k, 1);
}

proptest! {
    #[test]
    fn value_is_cash_plus_positions(
        closes in prop::collection::vec(prop::collection::vec(1.0..100.0f64, 5), 2..8),
        seed in any::<u64>(),
        k in 1usize..6,
    ) {
        use rand::Rng;
        let mut rng = seeded(seed);
        let preds: Vec<Vec<f64>> = closes.iter().map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let state = simulate(&sections(&preds), &price_table(&closes), k, CostModel::default(), 1e6).unwrap();
        prop_assert_eq!(state.equity.len(), closes.len());
        prop_assert!(state.cash >= 0.0);
        prop_assert!(state.holdings.len() <= k);
        let last = closes.last().unwrap();
        let marked: f64 = state.cash + state.holdings.iter().map(|(&i, h)| h.shares * last[i]).sum::<f64>();
        prop_assert!((marked - state.equity.last().unwrap().1).abs() <= 1e-9 * marked.max(1.0));
        // costs only ever remove value relative to the cost-free run
        let free = simulate(&sections(&preds), &price_table(&closes), k, CostModel::FREE, 1e6).unwrap();
        prop_assert!(state.value() <= free.value() * (1.0 + 1e-12));
    }

    #[test]
    fn static_prices_without_costs_keep_value(
        prices in prop::collection::vec(1.0..100.0f64, 4),
        days in 2usize..10,
        k in 1usize..5,
    ) {
        let closes = vec![prices.clone(); days];
        let preds = vec![vec![0.4, 0.1, 0.3, 0.2]; days];
        let state = simulate(&sections(&preds), &price_table(&closes), k, CostModel::FREE, 1e6).unwrap();
        for &(_, v) in &state.equity {
            prop_assert!((v - 1e6).abs() < 1e-9 * 1e6);
        }
    }
}
