import unittest

import numpy as np

from src.interfaces import builtin
from src.rpc.action import COUNTDOWN, CancelOutcome
from src.rpc.future import Future
from src.rpc.goal_status import GOAL_TRANSITIONS, GoalEvent, GoalState, GoalStatus, goal_transition
from src.rpc.service import ADD_TWO_INTS, response_envelope, service_topics
from src.shared.errors import (
    GoalRejectedError, ServerLostError, ServiceCallError, ServiceTimeoutError, TransitionError,
)
from src.tooling.components import add_two_ints, countdown
from tests.support import SimDomain

GOAL_ID = bytes(range(16))


def forever(goal_handle):
    count = 0
    while True:
        count += 1
        yield {"remaining": count}


class TestFuture(unittest.TestCase):

    def test_result_and_callbacks(self):
        future = Future()
        seen = []
        future.add_done_callback(lambda f: seen.append(f.result()))
        self.assertFalse(future.done())
        self.assertIsNone(future.result())
        future.set_result(5)
        future.set_result(6)
        self.assertEqual(future.result(), 5)
        self.assertEqual(seen, [5])
        future.add_done_callback(lambda f: seen.append("late"))
        self.assertEqual(seen, [5, "late"])

    def test_exception_is_raised_by_result(self):
        future = Future()
        future.set_exception(ServiceTimeoutError("late"))
        self.assertTrue(future.done())
        with self.assertRaises(ServiceTimeoutError):
            future.result()


class TestGoalTransitions(unittest.TestCase):

    LEGAL = {
        (GoalState.ACCEPTED, GoalEvent.EXECUTE): GoalState.EXECUTING,
        (GoalState.EXECUTING, GoalEvent.CANCEL_GOAL): GoalState.CANCELING,
        (GoalState.EXECUTING, GoalEvent.SUCCEED): GoalState.SUCCEEDED,
        (GoalState.EXECUTING, GoalEvent.ABORT): GoalState.ABORTED,
        (GoalState.CANCELING, GoalEvent.CANCELED): GoalState.CANCELED,
        (GoalState.CANCELING, GoalEvent.ABORT): GoalState.ABORTED,
        (GoalState.CANCELING, GoalEvent.SUCCEED): GoalState.SUCCEEDED,
    }

    def test_full_table(self):
        self.assertEqual(GOAL_TRANSITIONS, self.LEGAL)
        for state in GoalState:
            for event in GoalEvent:
                status = GoalStatus(GOAL_ID, state)
                if (state, event) in self.LEGAL:
                    self.assertEqual(goal_transition(status, event).state, self.LEGAL[(state, event)])
                else:
                    with self.assertRaises(TransitionError):
                        goal_transition(status, event)
                    self.assertEqual(status.state, state)

    def test_terminal_states_absorb(self):
        for state in (GoalState.SUCCEEDED, GoalState.CANCELED, GoalState.ABORTED):
            self.assertTrue(state.terminal)
            for event in GoalEvent:
                with self.assertRaises(TransitionError):
                    goal_transition(GoalStatus(GOAL_ID, state), event)

    def test_stamps_record_each_state(self):
        status = GoalStatus.accepted(GOAL_ID, 1.0)
        status = goal_transition(status, GoalEvent.EXECUTE, 2.0)
        status = goal_transition(status, GoalEvent.SUCCEED, 3.5)
        self.assertEqual(status.stamp_of(GoalState.EXECUTING), 2.0)
        self.assertEqual(status.stamp_of(GoalState.SUCCEEDED), 3.5)
        self.assertIsNone(status.stamp_of(GoalState.CANCELED))


class TestServices(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.executor = self.domain.executor

    def tearDown(self):
        self.domain.close()

    def test_add_two_ints_across_contexts(self):
        server_ctx, client_ctx = self.domain.context(), self.domain.context()
        server_ctx.create_node("adder").create_service("/add_two_ints", ADD_TWO_INTS, add_two_ints)
        client = client_ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        self.assertTrue(client.wait_for_service(self.executor, 5.0))
        response = client.call({"a": 2, "b": 3}, self.executor)
        self.assertEqual(response.sum, 5)

    def test_concurrent_calls_get_their_own_responses(self):
        ctx = self.domain.context()
        ctx.create_node("adder").create_service("/add_two_ints", ADD_TWO_INTS, add_two_ints)
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        first = client.call_async({"a": 1, "b": 2})
        second = client.call_async({"a": 10, "b": 20})
        self.assertTrue(self.domain.spin_until(lambda: first.done() and second.done(), 5.0))
        self.assertEqual((first.result().sum, second.result().sum), (3, 30))
        self.assertEqual(client.pending, 0)

    def test_responses_correlate_in_any_order(self):
        ctx = self.domain.context()
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        first = client.call_async({"a": 1, "b": 2})
        second = client.call_async({"a": 10, "b": 20})
        envelope = response_envelope(ADD_TWO_INTS.response)
        for seq, total in ((2, 30), (1, 3)):
            client._on_response(envelope.new(client_guid=client.guid, seq=seq, ok=True, error="",
                                             body={"sum": total}))
        self.assertEqual((first.result().sum, second.result().sum), (3, 30))

    def test_shuffled_responses_randomized(self):
        ctx = self.domain.context()
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        envelope = response_envelope(ADD_TWO_INTS.response)
        rng = np.random.default_rng(1234)
        for trial in range(1000):
            operands = rng.integers(-1000, 1000, size=(int(rng.integers(1, 9)), 2))
            futures = [client.call_async({"a": int(a), "b": int(b)}) for a, b in operands]
            responses = [envelope.new(client_guid=client.guid, seq=future.request_seq, ok=True, error="",
                                      body={"sum": int(a + b)})
                         for future, (a, b) in zip(futures, operands)]
            for index in rng.permutation(len(responses)):
                client._on_response(responses[index])
            # a duplicate arriving late changes nothing
            client._on_response(responses[int(rng.integers(len(responses)))])
            self.assertEqual([f.result().sum for f in futures], [int(a + b) for a, b in operands],
                             f"trial {trial}")
            self.assertEqual(client.pending, 0)

    def test_foreign_response_ignored(self):
        ctx = self.domain.context()
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        future = client.call_async({"a": 1, "b": 2})
        envelope = response_envelope(ADD_TWO_INTS.response)
        client._on_response(envelope.new(client_guid=bytes(16), seq=1, ok=True, error="", body={"sum": 3}))
        self.assertFalse(future.done())

    def test_no_server_times_out(self):
        ctx = self.domain.context()
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        started = self.domain.clock.now()
        future = client.call_async({"a": 1, "b": 1})
        self.assertTrue(self.executor.spin_until_future_complete(future, 10.0))
        self.assertIsInstance(future.exception(), ServiceTimeoutError)
        elapsed = self.domain.clock.now() - started
        self.assertGreaterEqual(elapsed, 5.0)
        self.assertLess(elapsed, 5.5)

    def test_blocking_call_raises_timeout(self):
        ctx = self.domain.context()
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS, timeout=0.5)
        with self.assertRaises(ServiceTimeoutError):
            client.call({"a": 1, "b": 1}, self.executor)

    def test_server_error_becomes_error_response(self):
        def broken(request):
            raise ValueError("no sums today")
        ctx = self.domain.context()
        service = ctx.create_node("adder").create_service("/add_two_ints", ADD_TWO_INTS, broken)
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        future = client.call_async({"a": 1, "b": 1})
        with self.assertLogs("src.rpc.service", level="ERROR"):
            self.executor.spin_until_future_complete(future, 5.0)
        self.assertIsInstance(future.exception(), ServiceCallError)
        self.assertIn("no sums today", str(future.exception()))
        self.assertEqual(service.handled, 1)

    def test_request_held_until_server_appears(self):
        ctx = self.domain.context()
        client = ctx.create_node("caller").create_client("/add_two_ints", ADD_TWO_INTS)
        future = client.call_async({"a": 4, "b": 5})
        self.domain.spin(0.5)
        self.assertFalse(future.done())
        ctx.create_node("adder").create_service("/add_two_ints", ADD_TWO_INTS, add_two_ints)
        self.executor.spin_until_future_complete(future, 5.0)
        self.assertEqual(future.result().sum, 9)

    def test_service_appears_in_graph(self):
        ctx = self.domain.context()
        node = ctx.create_node("adder")
        node.create_service("add_two_ints", ADD_TWO_INTS, add_two_ints)
        self.assertIn("/add_two_ints", node.get_service_names())
        self.assertEqual(service_topics("/add_two_ints"),
                         ("/svc/add_two_ints/request", "/svc/add_two_ints/response"))


class TestActions(unittest.TestCase):

    def setUp(self):
        self.domain = SimDomain()
        self.executor = self.domain.executor

    def tearDown(self):
        self.domain.close()

    def start(self, server_ctx, client_ctx, execute=countdown, cancel_callback=lambda handle: True):
        server_ctx.create_node("server").create_action_server(
            "/countdown", COUNTDOWN, execute,
            goal_callback=lambda goal: goal.n >= 0, cancel_callback=cancel_callback,
        )
        client = client_ctx.create_node("client").create_action_client("/countdown", COUNTDOWN)
        self.assertTrue(client.wait_for_server(self.executor, 5.0))
        return client

    def send(self, client, n):
        accepted = client.send_goal_async({"n": n})
        self.assertTrue(self.executor.spin_until_future_complete(accepted, 5.0))
        return accepted.result()

    def finish(self, handle):
        future = handle.get_result_async()
        self.assertTrue(self.executor.spin_until_future_complete(future, 5.0))
        return future

    def test_countdown_feedback_then_success(self):
        server_ctx, client_ctx = self.domain.context(), self.domain.context()
        client = self.start(server_ctx, client_ctx)
        handle = self.send(client, 3)
        self.assertTrue(handle.accepted)
        outcome = self.finish(handle).result()
        self.assertEqual(outcome.status, GoalState.SUCCEEDED)
        self.assertEqual(outcome.result.reached, 0)
        self.domain.spin(0.2)
        self.assertEqual([f.remaining for f in handle.feedback], [3, 2, 1])

    def test_rejected_goal_gets_no_feedback(self):
        ctx = self.domain.context()
        client = self.start(ctx, ctx)
        handle = self.send(client, -1)
        self.assertFalse(handle.accepted)
        self.assertIsInstance(handle.get_result_async().exception(), GoalRejectedError)
        self.domain.spin(0.2)
        self.assertEqual(handle.feedback, [])

    def test_cancel_cooperative_goal(self):
        ctx = self.domain.context()
        client = self.start(ctx, ctx)
        handle = self.send(client, 1000)
        self.domain.spin_until(lambda: handle.feedback, 5.0)
        cancel = handle.cancel_goal_async()
        self.assertTrue(self.executor.spin_until_future_complete(cancel, 5.0))
        self.assertEqual(cancel.result(), CancelOutcome.ACCEPTED)
        outcome = self.finish(handle).result()
        self.assertEqual(outcome.status, GoalState.CANCELED)
        self.assertGreater(outcome.result.reached, 0)

    def test_declined_cancel_runs_to_success(self):
        ctx = self.domain.context()
        client = self.start(ctx, ctx, cancel_callback=lambda handle: False)
        handle = self.send(client, 20)
        cancel = handle.cancel_goal_async()
        self.assertTrue(self.executor.spin_until_future_complete(cancel, 5.0))
        self.assertEqual(cancel.result(), CancelOutcome.REJECTED)
        self.assertEqual(self.finish(handle).result().status, GoalState.SUCCEEDED)
        self.assertEqual(len(handle.feedback), 20)

    def test_cancel_after_success_is_already_terminal(self):
        ctx = self.domain.context()
        client = self.start(ctx, ctx)
        handle = self.send(client, 2)
        self.finish(handle)
        cancel = handle.cancel_goal_async()
        self.assertEqual(cancel.result(), CancelOutcome.ALREADY_TERMINAL)

    def test_result_delivered_once(self):
        ctx = self.domain.context()
        client = self.start(ctx, ctx)
        handle = self.send(client, 1)
        self.assertIs(self.finish(handle), handle.get_result_async())

    def test_server_lost_mid_goal(self):
        server_ctx, client_ctx = self.domain.context(), self.domain.context()
        client = self.start(server_ctx, client_ctx, execute=forever)
        handle = self.send(client, 1)
        self.assertTrue(self.domain.spin_until(lambda: handle.feedback, 5.0))

        self.executor.remove_context(server_ctx)
        server_ctx.participant.transport.close()
        killed_at = self.domain.clock.now()
        future = handle.get_result_async()
        self.assertTrue(self.executor.spin_until_future_complete(future, 10.0))
        self.assertIsInstance(future.exception(), ServerLostError)
        elapsed = self.domain.clock.now() - killed_at
        self.assertGreaterEqual(elapsed, 2.0)
        self.assertLess(elapsed, 4.5)


if __name__ == "__main__":
    unittest.main()
