from typing import List

from ..models import ChatExchange, Component, EndpointRole, TaggedExchange


class ExchangeLog:
    """Collects the model exchanges made while answering one question"""

    def __init__(self):
        self._exchanges: List[TaggedExchange] = []

    def record(self, component: Component, endpoint_role: EndpointRole, exchange: ChatExchange) -> None:
        self._exchanges.append(
            TaggedExchange(component=component, endpoint_role=endpoint_role, exchange=exchange)
        )

    @property
    def exchanges(self) -> List[TaggedExchange]:
        return list(self._exchanges)

    def __len__(self) -> int:
        return len(self._exchanges)
