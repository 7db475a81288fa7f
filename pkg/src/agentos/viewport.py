"""Paginated text viewport.

Long tool output is read page by page instead of flooding a context window.
Pages are fixed character slices; every render ends with a footer line
``=== page i of N ===``, optionally followed by a parenthesized notice
(clamped navigation, search results). Search is case-insensitive and never
wraps past the end of the document.
"""

from __future__ import annotations

from .errors import EmptyInputError, NoPriorSearchError

DEFAULT_PAGE_SIZE = 4096


class Viewport:
    def __init__(self, text: str, page_size: int = DEFAULT_PAGE_SIZE):
        if page_size <= 0:
            raise ValueError("page_size must be positive")
        self.text = text
        self.page_size = page_size
        self.page = 1
        self._needle: str | None = None
        self._search_from = 0

    @property
    def page_count(self) -> int:
        if not self.text:
            return 1
        return (len(self.text) + self.page_size - 1) // self.page_size

    def _render(self, notice: str = "") -> str:
        start = (self.page - 1) * self.page_size
        body = self.text[start:start + self.page_size]
        footer = f"=== page {self.page} of {self.page_count} ==="
        if notice:
            footer += f" {notice}"
        return body + ("\n" if body and not body.endswith("\n") else "") + footer

    # -- navigation -----------------------------------------------------------

    def render(self) -> str:
        return self._render()

    def next_page(self) -> str:
        if self.page >= self.page_count:
            return self._render("(at last page)")
        self.page += 1
        return self._render()

    def prev_page(self) -> str:
        if self.page <= 1:
            return self._render("(at first page)")
        self.page -= 1
        return self._render()

    def goto(self, page: int) -> str:
        if page < 1:
            self.page = 1
            return self._render("(at first page)")
        if page > self.page_count:
            self.page = self.page_count
            return self._render("(at last page)")
        self.page = page
        return self._render()

    # -- search ----------------------------------------------------------------

    def find(self, needle: str) -> str:
        """Search forward from the top of the current page; jump to the match."""
        if not needle:
            raise EmptyInputError("search needle must be nonempty")
        self._needle = needle
        start = (self.page - 1) * self.page_size
        return self._search(start)

    def find_next(self) -> str:
        """Continue past the previous match; no wraparound."""
        if self._needle is None:
            raise NoPriorSearchError("find_next without a prior find")
        return self._search(self._search_from)

    def _search(self, start: int) -> str:
        assert self._needle is not None
        index = self.text.lower().find(self._needle.lower(), start)
        if index < 0:
            return self._render(f'(no match for "{self._needle}")')
        self._search_from = index + 1
        self.page = index // self.page_size + 1
        return self._render(f'(match "{self._needle}" at offset {index})')


def open_view(text: str, page_size: int = DEFAULT_PAGE_SIZE) -> Viewport:
    return Viewport(text, page_size)
